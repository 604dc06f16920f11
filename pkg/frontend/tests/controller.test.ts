import { describe, expect, it } from 'vitest';

import { SessionApi } from '../src/api.js';
import { SessionController } from '../src/controller.js';
import { FakeService, defaultQuery, defaultRecs } from './fake_service.js';

const DOCUMENTED = [
  /^GET http:\/\/test\/healthz$/,
  /^GET http:\/\/test\/items$/,
  /^POST http:\/\/test\/sessions$/,
  /^GET http:\/\/test\/sessions\/[^/]+$/,
  /^GET http:\/\/test\/sessions\/[^/]+\/query\?top_k=\d+$/,
  /^POST http:\/\/test\/sessions\/[^/]+\/ratings$/,
  /^GET http:\/\/test\/sessions\/[^/]+\/recommendations\?top_n=\d+$/,
];

function setup(options = {}) {
  const svc = new FakeService();
  const controller = new SessionController(new SessionApi('http://test', svc.fetch), options);
  return { svc, controller };
}

function assertDocumentedOnly(svc: FakeService): void {
  for (const r of svc.log) {
    const line = `${r.method} ${r.url}`;
    expect(DOCUMENTED.some((p) => p.test(line)), `undocumented call: ${line}`).toBe(true);
  }
}

describe('start', () => {
  it('brings the session to ready with server-fed fields', async () => {
    const { svc, controller } = setup();
    await controller.start();
    const s = controller.getState();
    expect(s.phase).toBe('ready');
    expect(s.rho).toBe(4);
    expect(s.sessionId).toBe('s1');
    expect(s.candidatesPruned).toBe(7);
    expect(controller.current()?.item).toBe(2);
    assertDocumentedOnly(svc);
  });

  it('fails to error phase when the service is unreachable', async () => {
    const { svc, controller } = setup();
    svc.failOn('/healthz');
    await controller.start();
    expect(controller.getState().phase).toBe('error');
    expect(controller.getState().errorMessage).toBeTruthy();
  });
});

describe('recommendations', () => {
  it('renders exactly what the service returned, order and all', async () => {
    const { controller } = setup();
    await controller.start();
    expect(controller.getState().recommendations).toEqual(defaultRecs().items);
  });
});

describe('rate', () => {
  it('posts the current candidate and refreshes query and list', async () => {
    const { svc, controller } = setup();
    await controller.start();
    const before = svc.log.length;
    await controller.rate(3);

    const posts = svc.requests({ method: 'POST', path: '/ratings' });
    expect(posts).toHaveLength(1);
    expect(posts[0].body).toEqual({ item: 2, rating: 3 });
    // one post, then query and recommendations are re-fetched
    const after = svc.log.slice(before).map((r) => `${r.method} ${r.url.split('/sessions/s1')[1] ?? r.url}`);
    expect(after).toEqual(['POST /ratings', 'GET /query?top_k=5', 'GET /recommendations?top_n=10']);
    expect(controller.getState().history).toEqual([{ item: 2, rating: 3, evoi: null }]);
    assertDocumentedOnly(svc);
  });

  it('allows at most one mutation in flight', async () => {
    const { svc, controller } = setup();
    await controller.start();
    const release = svc.delayOn('/ratings');
    const first = controller.rate(3);
    const second = controller.rate(4); // arrives while the first is pending
    release();
    await Promise.all([first, second]);
    expect(svc.requests({ method: 'POST', path: '/ratings' })).toHaveLength(1);
  });

  it('does nothing once the session is stopped', async () => {
    const { svc, controller } = setup();
    svc.queueQuery({
      item: null, expected_evoi: null, stop: true,
      reason: 'max expected value of information below threshold',
      candidates_pruned: 0, ranked: [],
    });
    await controller.start();
    expect(controller.getState().phase).toBe('done');
    expect(controller.getState().stopReason).toContain('below threshold');
    await controller.rate(3);
    expect(svc.requests({ method: 'POST', path: '/ratings' })).toHaveLength(0);
  });
});

describe('skip', () => {
  it('advances to the next-best candidate without posting anything', async () => {
    const { svc, controller } = setup();
    await controller.start();
    const before = svc.log.length;
    await controller.skip();
    expect(controller.current()?.item).toBe(0);
    await controller.skip();
    expect(controller.current()?.item).toBe(5);
    expect(svc.log).toHaveLength(before); // purely client-side
    expect(svc.requests({ method: 'POST', path: '/ratings' })).toHaveLength(0);
  });

  it('asks the server for a deeper list when the fetched one runs out', async () => {
    const { svc, controller } = setup({ topK: 3 });
    const deeper = defaultQuery();
    deeper.ranked.push({ item: 1, label: 'item-1', expected_evoi: 0.1 });
    svc.queueQuery(defaultQuery(), deeper); // first serves start(), second the deeper re-fetch
    await controller.start();
    await controller.skip();
    await controller.skip(); // now at the end of the 3 fetched
    await controller.skip(); // must re-fetch with top_k doubled
    const queryCalls = svc.requests({ path: '/query' }).map((r) => r.url);
    expect(queryCalls[queryCalls.length - 1]).toContain('top_k=6');
    expect(controller.current()?.item).toBe(1);
    expect(controller.getState().exhausted).toBe(false);
  });

  it('reports exhaustion when even the deeper list has nothing new', async () => {
    const { controller } = setup({ topK: 3 });
    await controller.start(); // fake always returns 3 ranked; 3 < 6 after doubling
    await controller.skip();
    await controller.skip();
    await controller.skip(); // deeper fetch still returns 3
    expect(controller.getState().exhausted).toBe(true);
    expect(controller.current()).not.toBeNull(); // stays on the last candidate
  });
});

describe('failure handling', () => {
  it('shows a retry banner and recovers without losing state', async () => {
    const { svc, controller } = setup();
    await controller.start();
    svc.failOn('/recommendations');
    await controller.rate(3);

    let s = controller.getState();
    expect(s.errorMessage).toBeTruthy();
    expect(s.sessionId).toBe('s1'); // nothing lost, the session lives server-side

    await controller.retry();
    s = controller.getState();
    expect(s.errorMessage).toBeNull();
    expect(s.recommendations).toEqual(defaultRecs().items);
    // the retried submit hit 409 (the rating had landed) and resynced,
    // so the rating appears exactly once
    expect(s.history).toEqual([{ item: 2, rating: 3, evoi: null }]);
    assertDocumentedOnly(svc);
  });
});
