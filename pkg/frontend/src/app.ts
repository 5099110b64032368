// DOM wiring for the adjudication page. The expert token comes from the
// ?expert= query parameter (or localStorage), the service base URL from
// ?service= (defaults to same origin). Keyboard: m = match, d = differ,
// s = skip, r = retry/reconnect.

import { ReviewClient, QueuedVote, QueueStorage, ViewModel } from './client.js';

class LocalQueueStorage implements QueueStorage {
  constructor(private readonly key: string) {}

  load(): QueuedVote[] {
    try {
      const raw = window.localStorage.getItem(this.key);
      return raw ? (JSON.parse(raw) as QueuedVote[]) : [];
    } catch {
      return [];
    }
  }

  save(votes: QueuedVote[]): void {
    window.localStorage.setItem(this.key, JSON.stringify(votes));
  }
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function renderMedia(pane: HTMLElement, uri: string, label: string): void {
  pane.replaceChildren();
  const caption = document.createElement('div');
  caption.className = 'caption';
  caption.textContent = label;
  pane.appendChild(caption);
  if (/^https?:.*\.(mp4|webm|mov)(\?.*)?$/i.test(uri)) {
    const video = document.createElement('video');
    video.src = uri;
    video.controls = true;
    video.loop = true;
    video.muted = true;
    video.autoplay = true;
    pane.appendChild(video);
  } else {
    const link = document.createElement('a');
    link.href = uri;
    link.textContent = uri;
    link.target = '_blank';
    pane.appendChild(link);
  }
}

function render(view: ViewModel): void {
  const status = el<HTMLDivElement>('status');
  const taskBox = el<HTMLDivElement>('task');
  const doneBox = el<HTMLDivElement>('done');
  const offlineBox = el<HTMLDivElement>('offline');
  const notice = el<HTMLDivElement>('notice');

  notice.textContent = view.notice ?? '';
  notice.hidden = !view.notice;
  offlineBox.hidden = view.connectivity !== 'offline';
  doneBox.hidden = !(view.allDone && view.connectivity === 'online');
  taskBox.hidden = !view.task;

  const progress = view.progress;
  const total = progress ? progress.tasks : 0;
  const closed = progress ? progress.closed : 0;
  status.textContent =
    `session votes: ${view.sessionVotes}` +
    (view.queuedVotes ? ` (queued: ${view.queuedVotes})` : '') +
    (progress ? ` | tasks closed: ${closed}/${total}` : '');

  if (view.task) {
    el<HTMLSpanElement>('pair-label').textContent =
      `${view.task.pairA}  vs  ${view.task.pairB}`;
    el<HTMLSpanElement>('pair-meta').textContent =
      `rank ${view.task.rank} | ${view.task.source} | ` +
      `${view.task.votesRecorded}/${view.task.quorum} votes`;
    renderMedia(el('media-a'), view.task.mediaA, view.task.pairA);
    renderMedia(el('media-b'), view.task.mediaB, view.task.pairB);
    const disabled = view.submitting;
    el<HTMLButtonElement>('btn-match').disabled = disabled;
    el<HTMLButtonElement>('btn-differ').disabled = disabled;
  }
}

export async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const expert = params.get('expert')
    ?? window.localStorage.getItem('review-expert') ?? '';
  if (!expert) {
    el<HTMLDivElement>('status').textContent =
      'no expert token: add ?expert=YOUR_ID to the URL';
    return;
  }
  window.localStorage.setItem('review-expert', expert);
  const base = params.get('service') ?? window.location.origin;
  const client = new ReviewClient({
    baseUrl: base,
    expert,
    storage: new LocalQueueStorage(`review-queue:${expert}`),
  });

  const sync = (view: ViewModel) => render(view);

  const submit = async (verdict: boolean) => {
    await client.submitVerdict(verdict);
    sync(await client.fetchNext());
    await client.refreshProgress();
    sync(client.view());
  };

  el<HTMLButtonElement>('btn-match').addEventListener('click', () => submit(true));
  el<HTMLButtonElement>('btn-differ').addEventListener('click', () => submit(false));
  el<HTMLButtonElement>('btn-skip').addEventListener('click', async () => {
    client.skip();
    sync(await client.fetchNext());
  });
  el<HTMLButtonElement>('btn-retry').addEventListener('click', async () => {
    sync(await client.resume());
  });
  window.addEventListener('online', async () => {
    sync(await client.resume());
  });
  window.addEventListener('keydown', async (event) => {
    if (event.key === 'm') await submit(true);
    else if (event.key === 'd') await submit(false);
    else if (event.key === 's') {
      client.skip();
      sync(await client.fetchNext());
    } else if (event.key === 'r') sync(await client.resume());
  });

  await client.refreshProgress();
  sync(await client.fetchNext());
}

if (typeof document !== 'undefined' && document.getElementById('task')) {
  void start();
}
