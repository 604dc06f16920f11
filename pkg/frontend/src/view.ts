// DOM rendering for the session page. The whole view is rebuilt from
// the controller state on every change; at this page size that is
// simpler and safer than incremental updates.
//
// Labels come from user-editable CSVs, so they are always set through
// textContent, never markup.

import type { SessionState } from './controller.js';

export interface ViewHandlers {
  onRate: (rating: number) => void;
  onSkip: () => void;
  onRetry: () => void;
  onRestart: () => void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function render(root: HTMLElement, state: SessionState, handlers: ViewHandlers): void {
  root.textContent = '';

  const header = el('div', { class: 'header' });
  header.appendChild(el('h1', {}, 'rating session'));
  if (state.modelKind) {
    header.appendChild(
      el('p', { class: 'meta' },
        `${state.modelKind} model, ${state.nItems} items, scale 1..${state.rho}`),
    );
  }
  root.appendChild(header);

  if (state.errorMessage !== null) {
    const banner = el('div', { id: 'error-banner', class: 'banner error' });
    banner.appendChild(el('span', {}, `request failed: ${state.errorMessage}`));
    const retry = el('button', { id: 'retry-btn' }, 'retry');
    retry.addEventListener('click', handlers.onRetry);
    banner.appendChild(retry);
    root.appendChild(banner);
  }

  if (state.phase === 'idle' || state.phase === 'starting') {
    root.appendChild(el('p', { class: 'meta' }, 'connecting...'));
    return;
  }

  if (state.phase === 'done') {
    const banner = el('div', { id: 'stop-banner', class: 'banner done' });
    banner.appendChild(el('strong', {}, 'recommendation ready'));
    if (state.stopReason) banner.appendChild(el('span', {}, ` (${state.stopReason})`));
    root.appendChild(banner);
  }

  const query = state.query;
  const current = !query || query.stop ? null : (query.ranked[state.skipOffset] ?? null);
  if (current) {
    const card = el('div', { id: 'query-card', class: 'card' });
    card.appendChild(el('h2', {}, 'how would you rate'));
    card.appendChild(el('p', { class: 'query-label' }, current.label));
    card.appendChild(
      el('p', { class: 'meta' },
        `expected value of information ${current.expected_evoi.toFixed(4)}` +
        (state.candidatesPruned > 0 ? `, ${state.candidatesPruned} targets pruned from the scan` : '')),
    );

    const controls = el('div', { id: 'rating-controls' });
    for (let r = 1; r <= state.rho; r++) {
      const btn = el('button', { class: 'rate-btn', 'data-rating': String(r) }, String(r));
      btn.disabled = state.pending;
      btn.addEventListener('click', () => handlers.onRate(r));
      controls.appendChild(btn);
    }
    const skip = el('button', { id: 'skip-btn' }, "haven't seen it");
    skip.disabled = state.pending;
    skip.addEventListener('click', handlers.onSkip);
    controls.appendChild(skip);
    card.appendChild(controls);

    if (state.exhausted) {
      card.appendChild(el('p', { id: 'exhausted-note', class: 'meta' },
        'nothing further to suggest; rate this one or stop here'));
    }

    if (query && query.ranked.length > 1) {
      const alts = el('ol', { id: 'ranked-list', class: 'meta' });
      query.ranked.forEach((c, i) => {
        const cls = i === state.skipOffset ? 'ranked current' : 'ranked';
        alts.appendChild(el('li', { class: cls }, `${c.label} (${c.expected_evoi.toFixed(4)})`));
      });
      card.appendChild(alts);
    }
    root.appendChild(card);
  }

  const recs = el('div', { class: 'card' });
  recs.appendChild(el('h2', {}, 'recommended for you'));
  const list = el('ol', { id: 'recs' });
  for (const r of state.recommendations) {
    list.appendChild(el('li', {}, `${r.label} (predicted ${r.posterior_mean.toFixed(2)})`));
  }
  recs.appendChild(list);
  root.appendChild(recs);

  if (state.history.length > 0) {
    const hist = el('div', { class: 'card' });
    hist.appendChild(el('h2', {}, 'your ratings'));
    const ul = el('ul', { id: 'history' });
    for (const h of state.history) {
      const evoi = h.evoi === null ? 'volunteered' : `evoi ${h.evoi.toFixed(4)}`;
      ul.appendChild(el('li', {}, `item ${h.item}: rated ${h.rating} (${evoi})`));
    }
    hist.appendChild(ul);
    root.appendChild(hist);
  }

  const restart = el('button', { id: 'restart-btn' }, 'new session');
  restart.disabled = state.pending;
  restart.addEventListener('click', handlers.onRestart);
  root.appendChild(restart);
}
