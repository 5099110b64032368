import { describe, expect, it } from 'vitest';

import { MemoryStorage, ReviewClient, Transport } from '../src/client.js';

// Scripted in-memory service double: mirrors the real wire protocol and the
// server's vote bookkeeping closely enough for state-machine tests.
class FakeService {
  tasks: { pairA: string; pairB: string; rank: number }[];
  votes = new Map<string, Map<string, boolean>>();
  quorum = 5;
  offline = false;
  requests = 0;

  constructor(pairs: [string, string][]) {
    this.tasks = pairs.map(([a, b], i) => ({ pairA: a, pairB: b, rank: i + 1 }));
  }

  private key(a: string, b: string) {
    return `${a}|${b}`;
  }

  private taskLine(t: { pairA: string; pairB: string; rank: number }) {
    const votes = this.votes.get(this.key(t.pairA, t.pairB))?.size ?? 0;
    return `task pair_a=${t.pairA} pair_b=${t.pairB} rank=${t.rank} ` +
      `source=template_similarity media_a=media://a media_b=media://b ` +
      `votes_recorded=${votes} status=${votes >= this.quorum ? 'closed' : 'open'} ` +
      `quorum=${this.quorum}`;
  }

  transport(): Transport {
    return async (url, init) => {
      this.requests += 1;
      if (this.offline) {
        throw new TypeError('fetch failed');
      }
      const u = new URL(url);
      const ok = (line: string) => ({ status: 200, text: async () => line });
      if (u.pathname === '/tasks/next') {
        const expert = u.searchParams.get('expert') ?? '';
        for (const t of this.tasks) {
          const votes = this.votes.get(this.key(t.pairA, t.pairB));
          if ((votes?.size ?? 0) >= this.quorum) continue;
          if (votes?.has(expert)) continue;
          return ok(this.taskLine(t));
        }
        return ok('none remaining=0');
      }
      if (u.pathname === '/votes') {
        const fields = new Map(
          (init?.body ?? '').split(/\s+/).slice(1)
            .map((tok) => [tok.slice(0, tok.indexOf('=')),
                           tok.slice(tok.indexOf('=') + 1)] as [string, string]));
        const expert = fields.get('expert')!;
        const a = fields.get('pair_a')!;
        const b = fields.get('pair_b')!;
        const verdict = fields.get('verdict') === 'match';
        const key = this.key(a, b);
        const byExpert = this.votes.get(key) ?? new Map<string, boolean>();
        if (byExpert.has(expert)) {
          if (byExpert.get(expert) === verdict) {
            return ok(`ack pair_a=${a} pair_b=${b} votes_recorded=${byExpert.size} ` +
              `status=${byExpert.size >= this.quorum ? 'closed' : 'open'} duplicate=true`);
          }
          return ok('error reason=conflicting-vote');
        }
        if (byExpert.size >= this.quorum) {
          return ok('error reason=task-closed');
        }
        byExpert.set(expert, verdict);
        this.votes.set(key, byExpert);
        return ok(`ack pair_a=${a} pair_b=${b} votes_recorded=${byExpert.size} ` +
          `status=${byExpert.size >= this.quorum ? 'closed' : 'open'} duplicate=false`);
      }
      if (u.pathname === '/progress') {
        let closed = 0;
        let votes = 0;
        for (const t of this.tasks) {
          const count = this.votes.get(this.key(t.pairA, t.pairB))?.size ?? 0;
          votes += count;
          if (count >= this.quorum) closed += 1;
        }
        return ok(`progress tasks=${this.tasks.length} ` +
          `open=${this.tasks.length - closed} closed=${closed} ` +
          `votes=${votes} quorum=${this.quorum}`);
      }
      return ok('error reason=not-found');
    };
  }

  totalVotes(): number {
    let n = 0;
    for (const v of this.votes.values()) n += v.size;
    return n;
  }
}

function makeClient(service: FakeService, expert = 'e1',
                    storage = new MemoryStorage()) {
  return new ReviewClient({
    baseUrl: 'http://service.test',
    expert,
    transport: service.transport(),
    storage,
  });
}

describe('ReviewClient', () => {
  it('fetches tasks in rank order and reaches the all-done state', async () => {
    const service = new FakeService([['a', 'b'], ['c', 'd']]);
    const client = makeClient(service);
    let view = await client.fetchNext();
    expect(view.task?.pairA).toBe('a');
    await client.submitVerdict(true);
    view = await client.fetchNext();
    expect(view.task?.pairA).toBe('c');
    await client.submitVerdict(false);
    view = await client.fetchNext();
    expect(view.task).toBeNull();
    expect(view.allDone).toBe(true);
    expect(view.sessionVotes).toBe(2);
    expect(service.totalVotes()).toBe(2);
  });

  it('ignores double-clicks: exactly one vote reaches the server', async () => {
    const service = new FakeService([['a', 'b']]);
    const client = makeClient(service);
    await client.fetchNext();
    const [first, second] = await Promise.all([
      client.submitVerdict(true),
      client.submitVerdict(true),
    ]);
    expect([first, second].sort()).toEqual(['ignored', 'recorded']);
    expect(service.totalVotes()).toBe(1);
    // a later repeat for the same pair is also ignored client-side
    expect(await client.submitVerdict(true)).toBe('ignored');
    expect(service.totalVotes()).toBe(1);
  });

  it('queues offline votes and flushes them once on reconnect', async () => {
    const service = new FakeService([['a', 'b'], ['c', 'd']]);
    const client = makeClient(service);
    await client.fetchNext();
    service.offline = true;
    const outcome = await client.submitVerdict(true);
    expect(outcome).toBe('queued');
    let view = client.view();
    expect(view.queuedVotes).toBe(1);
    expect(view.connectivity).toBe('offline');
    expect(view.sessionVotes).toBe(1);
    // fetch attempts while offline keep the session intact
    view = await client.fetchNext();
    expect(view.connectivity).toBe('offline');
    expect(view.queuedVotes).toBe(1);

    service.offline = false;
    view = await client.resume();
    expect(view.queuedVotes).toBe(0);
    expect(service.totalVotes()).toBe(1);
    expect(view.task?.pairA).toBe('c');
    // flushing again sends nothing new
    await client.flushQueue();
    expect(service.totalVotes()).toBe(1);
  });

  it('persists the queue across a page refresh without duplicating votes',
     async () => {
    const service = new FakeService([['a', 'b']]);
    const storage = new MemoryStorage();
    const first = makeClient(service, 'e1', storage);
    await first.fetchNext();
    service.offline = true;
    await first.submitVerdict(false);
    expect(storage.load()).toHaveLength(1);

    // page refresh: a new client over the same storage delivers the vote
    service.offline = false;
    const second = makeClient(service, 'e1', storage);
    await second.resume();
    expect(service.totalVotes()).toBe(1);
    expect(storage.load()).toHaveLength(0);
    // the refreshed session cannot vote that pair again
    await second.fetchNext();
    expect(await second.submitVerdict(true)).toBe('ignored');
    expect(service.totalVotes()).toBe(1);
  });

  it('reconciles queued votes before fetching so decided pairs never '
     + 'render again', async () => {
    const service = new FakeService([['a', 'b'], ['c', 'd']]);
    const client = makeClient(service);
    await client.fetchNext();
    service.offline = true;
    await client.submitVerdict(true); // queued; pair (a,b) decided locally
    service.offline = false;
    // plain fetchNext (no explicit resume) flushes the queue first, so the
    // server records the vote and serves the next pair
    const view = await client.fetchNext();
    expect(view.task?.pairA).toBe('c');
    expect(service.totalVotes()).toBe(1);
  });

  it('auto-skips a served task whose vote ack crossed the fetch (race)',
     async () => {
    // scripted transport: the first /tasks/next response is stale and
    // repeats the already-voted pair; the client skips and fetches again
    const lines = [
      'task pair_a=a pair_b=b rank=1 source=template_similarity ' +
        'media_a=m://a media_b=m://b votes_recorded=0 status=open quorum=5',
      'ack pair_a=a pair_b=b votes_recorded=1 status=open duplicate=false',
      'task pair_a=a pair_b=b rank=1 source=template_similarity ' +
        'media_a=m://a media_b=m://b votes_recorded=0 status=open quorum=5',
      'task pair_a=c pair_b=d rank=2 source=template_similarity ' +
        'media_a=m://c media_b=m://d votes_recorded=0 status=open quorum=5',
    ];
    let cursor = 0;
    const client = new ReviewClient({
      baseUrl: 'http://scripted.test',
      expert: 'e1',
      transport: async () => ({ status: 200, text: async () => lines[cursor++] }),
    });
    await client.fetchNext();
    await client.submitVerdict(true);
    const view = await client.fetchNext();
    expect(view.task?.pairA).toBe('c');
    expect(cursor).toBe(lines.length);
  });

  it('surfaces closed-task rejections as a notice and advances', async () => {
    const service = new FakeService([['a', 'b'], ['c', 'd']]);
    const experts = ['x1', 'x2', 'x3', 'x4', 'x5'];
    for (const expert of experts) {
      const c = makeClient(service, expert);
      await c.fetchNext();
      await c.submitVerdict(true);
    }
    // a straggler holds a stale view of the now-closed task
    const stale = makeClient(service, 'late');
    const fetched = await stale.fetchNext();
    expect(fetched.task?.pairA).toBe('c'); // server already skips closed tasks
    // force the stale submit path directly
    const forced = makeClient(service, 'late2');
    const view = await forced.fetchNext();
    expect(view.task?.pairA).toBe('c');
    service.votes.set('c|d', new Map(
      experts.map((e) => [e, true])));
    const outcome = await forced.submitVerdict(false);
    expect(outcome).toBe('rejected');
    expect(forced.view().notice).toBe('task-closed');
    expect(forced.view().task).toBeNull();
  });

  it('tracks quorum progress from the service', async () => {
    const service = new FakeService([['a', 'b']]);
    const client = makeClient(service);
    for (const expert of ['x1', 'x2', 'x3', 'x4', 'x5']) {
      const c = makeClient(service, expert);
      await c.fetchNext();
      await c.submitVerdict(expert < 'x4');
    }
    const progress = await client.refreshProgress();
    expect(progress?.closed).toBe(1);
    expect(progress?.votes).toBe(5);
  });

  it('never sends a vote without an explicit submit call', async () => {
    const service = new FakeService([['a', 'b']]);
    const client = makeClient(service);
    await client.fetchNext();
    await client.refreshProgress();
    await client.fetchNext();
    client.skip();
    await client.fetchNext();
    expect(service.totalVotes()).toBe(0);
  });
});
