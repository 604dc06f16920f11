"""Run one interactive session against the HTTP service.

Starts the service in a background thread on a spare port, then talks
to it exactly the way a browser client would: create a session, loop
query -> rate, and fetch recommendations. The simulated user answers
from a rating vector drawn from the same model the server is serving.
"""

import json
import socket
import threading
import urllib.request

import uvicorn

from activecf import generate_synthetic, separated_ground_truth
from activecf.service import create_app

truth = separated_ground_truth(m_items=30, n_types=3, n_attitudes=3, rho=6, seed=2,
                               frac_polarizing=0.6, frac_quality=0.1)
d = generate_synthetic(truth, n_users=1, density=1.0, seed=5)
answers = dict(zip(d.items.tolist(), d.ratings.tolist()))

with socket.socket() as s:
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]

server = uvicorn.Server(uvicorn.Config(create_app(truth), host="127.0.0.1",
                                       port=port, log_level="error"))
threading.Thread(target=server.run, daemon=True).start()
while not server.started:
    pass
base = f"http://127.0.0.1:{port}"


def call(method, path, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(base + path, data=data, method=method,
                                 headers={"content-type": "application/json"})
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


print("server says:", call("GET", "/healthz"))
session = call("POST", "/sessions", {"evoi_threshold": 0.01})
sid = session["id"]
print(f"session {sid} created\n")

for step in range(1, 8):
    q = call("GET", f"/sessions/{sid}/query?top_k=3")
    if q["stop"]:
        print(f"server stopped the interview: {q['reason']}")
        break
    ranked = ", ".join(f"{c['item']}:{c['expected_evoi']:.3f}" for c in q["ranked"])
    print(f"step {step}: asked item {q['item']} (evoi {q['expected_evoi']:.4f}; top-3 {ranked})")
    call("POST", f"/sessions/{sid}/ratings", {"item": q["item"], "rating": answers[q["item"]]})

recs = call("GET", f"/sessions/{sid}/recommendations?top_n=5")
print("\nrecommendations:")
for r in recs["items"]:
    print(f"  item {r['item']:>3}  predicted {r['posterior_mean']:.2f}  actual {answers[r['item']]}")

server.should_exit = True
