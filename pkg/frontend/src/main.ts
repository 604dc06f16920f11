// Page wiring: one controller, one render target. The service base
// URL comes from the ?api= query parameter, falling back to the page's
// own origin for same-host deployments.

import { SessionApi } from './api.js';
import { SessionController } from './controller.js';
import { render } from './view.js';

function apiBase(): string {
  const param = new URLSearchParams(window.location.search).get('api');
  return param ?? window.location.origin;
}

export function mount(root: HTMLElement): SessionController {
  const api = new SessionApi(apiBase(), (url, init) => window.fetch(url, init));
  const controller = new SessionController(api, {
    onChange: (state) =>
      render(root, state, {
        onRate: (r) => void controller.rate(r),
        onSkip: () => void controller.skip(),
        onRetry: () => void controller.retry(),
        onRestart: () => void controller.start(),
      }),
  });
  void controller.start();
  return controller;
}

const root = document.getElementById('app');
if (root) mount(root);
