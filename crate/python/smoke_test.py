"""Smoke test for the pipechain Python bindings.

Build first:  pip install --no-build-isolation -e crates/py
"""

import hashlib
import json

import pipechain_py as pc


def leaf(account, balance):
    return hashlib.sha256(b"L" + account.to_bytes(8, "big") + balance.to_bytes(8, "big")).hexdigest()


def main():
    assert pc.leaf_hash(3, 10) == leaf(3, 10)
    assert pc.k_hat(1) == 1 and pc.j_hat(7) == 7
    assert pc.min_committees(32, 8, 511) == (4, 1)

    cfg = json.loads(pc.Simulation.default_config())
    cfg.update(rounds=30, f=12, seed=5)
    sim = pc.Simulation(json.dumps(cfg), audit=True)

    genesis = sim.state_root
    first = json.loads(sim.step())
    assert first["round"] == 1 and sim.round == 1
    lines = sim.run()
    assert len(lines) == 29
    assert sim.state_root != genesis
    assert sim.theorems_hold(), sim.summary()

    summary = json.loads(sim.summary())
    assert summary["oracle_checks"] == summary["oracle_matches"] > 0

    account = 0
    proof = sim.serve_proof(account)
    assert json.loads(proof)["balance"] == sim.balance(account)
    assert pc.verify_proof(proof, sim.state_root)

    try:
        pc.Simulation(json.dumps({**cfg, "f": 0, "leaf_count": 3}))
    except ValueError:
        pass
    else:
        raise AssertionError("bad config accepted")

    faulty = pc.Simulation(json.dumps(cfg))
    faulty.inject_fault(4)
    try:
        faulty.run()
    except RuntimeError as e:
        print("fault detected:", e)
    else:
        raise AssertionError("fault went unnoticed")

    print("smoke test ok:", summary["accepted"], "transfers accepted, root", sim.state_root[:16])


if __name__ == "__main__":
    main()
