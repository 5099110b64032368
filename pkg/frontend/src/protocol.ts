// Wire protocol of the review service: every response body is a single
// text line `<kind> key=value key=value ...`. Values never contain spaces;
// the first '=' splits key from value so URIs survive.

export interface TaskRecord {
  kind: 'task';
  pairA: string;
  pairB: string;
  rank: number;
  source: string;
  mediaA: string;
  mediaB: string;
  votesRecorded: number;
  status: 'open' | 'closed';
  quorum: number;
}

export interface NoneRecord {
  kind: 'none';
  remaining: number;
}

export interface AckRecord {
  kind: 'ack';
  pairA: string;
  pairB: string;
  votesRecorded: number;
  status: 'open' | 'closed';
  duplicate: boolean;
}

export interface ProgressRecord {
  kind: 'progress';
  tasks: number;
  open: number;
  closed: number;
  votes: number;
  quorum: number;
}

export interface ErrorRecord {
  kind: 'error';
  reason: string;
}

export type ServiceRecord =
  | TaskRecord
  | NoneRecord
  | AckRecord
  | ProgressRecord
  | ErrorRecord;

export class ProtocolError extends Error {}

export function parseFields(line: string): { kind: string; fields: Map<string, string> } {
  const tokens = line.trim().split(/\s+/);
  if (tokens.length === 0 || tokens[0] === '') {
    throw new ProtocolError('empty record line');
  }
  const fields = new Map<string, string>();
  for (const token of tokens.slice(1)) {
    const eq = token.indexOf('=');
    if (eq <= 0) {
      throw new ProtocolError(`token ${token} is not key=value`);
    }
    const key = token.slice(0, eq);
    if (fields.has(key)) {
      throw new ProtocolError(`duplicate field ${key}`);
    }
    fields.set(key, token.slice(eq + 1));
  }
  return { kind: tokens[0], fields };
}

function need(fields: Map<string, string>, key: string): string {
  const value = fields.get(key);
  if (value === undefined) {
    throw new ProtocolError(`missing field ${key}`);
  }
  return value;
}

function needInt(fields: Map<string, string>, key: string): number {
  const value = Number(need(fields, key));
  if (!Number.isInteger(value)) {
    throw new ProtocolError(`field ${key} is not an integer`);
  }
  return value;
}

export function parseResponse(line: string): ServiceRecord {
  const { kind, fields } = parseFields(line);
  switch (kind) {
    case 'task':
      return {
        kind,
        pairA: need(fields, 'pair_a'),
        pairB: need(fields, 'pair_b'),
        rank: needInt(fields, 'rank'),
        source: need(fields, 'source'),
        mediaA: need(fields, 'media_a'),
        mediaB: need(fields, 'media_b'),
        votesRecorded: needInt(fields, 'votes_recorded'),
        status: need(fields, 'status') === 'closed' ? 'closed' : 'open',
        quorum: needInt(fields, 'quorum'),
      };
    case 'none':
      return { kind, remaining: needInt(fields, 'remaining') };
    case 'ack':
      return {
        kind,
        pairA: need(fields, 'pair_a'),
        pairB: need(fields, 'pair_b'),
        votesRecorded: needInt(fields, 'votes_recorded'),
        status: need(fields, 'status') === 'closed' ? 'closed' : 'open',
        duplicate: need(fields, 'duplicate') === 'true',
      };
    case 'progress':
      return {
        kind,
        tasks: needInt(fields, 'tasks'),
        open: needInt(fields, 'open'),
        closed: needInt(fields, 'closed'),
        votes: needInt(fields, 'votes'),
        quorum: needInt(fields, 'quorum'),
      };
    case 'error':
      return { kind, reason: need(fields, 'reason') };
    default:
      throw new ProtocolError(`unknown record kind ${kind}`);
  }
}

export function voteBody(expert: string, pairA: string, pairB: string,
                         verdict: boolean): string {
  return `vote expert=${expert} pair_a=${pairA} pair_b=${pairB} ` +
    `verdict=${verdict ? 'match' : 'differ'}`;
}
