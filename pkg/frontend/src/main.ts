/** DOM wiring: session picker, crop gallery at 1:1 scale, keyboard triage. */

import { ApiClient, SessionInfo } from './api.js';
import { defaultSessionOrder, ReviewSession } from './state.js';

const api = new ApiClient('');
const session = new ReviewSession(api);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function renderBanner(): void {
  const banner = el<HTMLDivElement>('banner');
  banner.textContent = session.banner ?? '';
  banner.style.display = session.banner ? 'block' : 'none';
}

function renderProgress(): void {
  const counts = session.counts();
  el<HTMLSpanElement>('progress').textContent =
    `${Math.min(session.cursor + 1, session.crops.length)}/${session.crops.length} - ` +
    `pending ${counts.pending}, keep ${counts.keep}, discard ${counts.discard}` +
    (session.pendingPosts() > 0 ? ` (${session.pendingPosts()} unsynced)` : '');
}

function renderGallery(): void {
  const gallery = el<HTMLDivElement>('gallery');
  gallery.replaceChildren();
  session.crops.forEach((crop, index) => {
    const cell = document.createElement('figure');
    cell.className = 'cell' + (index === session.cursor ? ' focused' : '') + ` qc-${crop.qc}`;
    const img = document.createElement('img');
    img.src = crop.url;
    img.alt = crop.crop_id;
    img.loading = 'lazy';
    const caption = document.createElement('figcaption');
    caption.textContent = `${crop.individual} · ${crop.qc}`;
    cell.append(img, caption);
    cell.addEventListener('click', () => {
      session.cursor = index;
      render();
    });
    gallery.append(cell);
  });
  const focused = gallery.children[session.cursor] as HTMLElement | undefined;
  focused?.scrollIntoView({ block: 'nearest' });
}

function render(): void {
  renderBanner();
  renderProgress();
  renderGallery();
}

async function loadSession(day: number, set: number): Promise<void> {
  await session.load(day, set);
  render();
}

async function boot(): Promise<void> {
  const sessions: SessionInfo[] = await api.sessions();
  const pending = new Map<string, number>();
  for (const s of sessions) {
    const page = await api.crops({ day: s.day, set: s.set, status: 'pending', page_size: 1 });
    pending.set(`${s.day}:${s.set}`, page.total);
  }
  const ordered = defaultSessionOrder(sessions, pending);
  const picker = el<HTMLSelectElement>('session');
  picker.replaceChildren(
    ...ordered.map((s) => {
      const option = document.createElement('option');
      option.value = `${s.day}:${s.set}`;
      option.textContent =
        `day ${s.day} set ${s.set} - ${pending.get(`${s.day}:${s.set}`)} pending of ${s.count}`;
      return option;
    }),
  );
  picker.addEventListener('change', () => {
    const [day, set] = picker.value.split(':').map(Number);
    void loadSession(day, set);
  });
  document.addEventListener('keydown', (event) => {
    if (event.target instanceof HTMLSelectElement) return;
    const action = session.triageKey(event.key);
    if (action) {
      event.preventDefault();
      render();
      // re-render once the queue settles so rollbacks become visible
      void session.drain().then(render);
    }
  });
  if (ordered.length > 0) {
    await loadSession(ordered[0].day, ordered[0].set);
  }
}

void boot();
