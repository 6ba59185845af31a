"""Quick end-to-end check of the Python bindings."""

import math

import coopstream as cs


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert close(cs.snr_coefficient(1.0, 4 * math.exp(-3)), 0.5)
    assert close(cs.coop_rate(2.0, 4.0, 1.0), 4.0 / 3.0)
    rho = cs.phase_split(2.0, 4.0, 1.0)
    assert close(rho * 2.0, (1 - rho) * 4.0)
    assert cs.subgradient_step(0.1, 0.5, 0.0, 0.9) == 0.0
    assert close(sum(cs.normalize_allocations([0.8, 0.8])), 1.0)
    assert cs.bits_for_gain(1.0, 0.0001, 8) == 0

    # Frame 1 needs frame 0 complete first.
    acts = cs.feasible_actions([2, 1], [(0, 1)], 3)
    assert sorted(acts) == [[0, 0], [1, 0], [2, 0], [2, 1]], acts

    mdp = cs.solve_mdp([[(0, 0.0, 0), (2, 3.0, 0)]], [2.0], [1.0], lambda_=0.0, alpha=0.5)
    assert close(mdp["values"][0][0], 3.0 / (1 - 0.5), 1e-6)
    assert mdp["packets"][0][0] == 2

    worst, excess = cs.oracle_gap(instances=20, seed=1)
    assert worst < 1e-8 and excess < 1e-8, (worst, excess)

    cfg = cs.Config()
    cfg.n_relays = 8
    cfg.n_slots = 30
    cfg.pmf_samples = 100
    try:
        cfg.alpha = 1.5
        raise AssertionError("alpha = 1.5 accepted")
    except ValueError:
        pass
    assert cs.Config(cfg.to_toml()).n_relays == 8

    summary, records = cs.run(cfg, records=True)
    assert summary["slots"] == 30
    assert len(records) == 30 * len(cfg.sources)
    assert summary["max_utilization"] <= 1.0 + 1e-12

    cells = cs.sweep(cfg, distances=[30.0, 90.0], xi_values=[0.2])
    assert [c["distance"] for c in cells] == [30.0, 90.0]

    outcomes = cs.recruit(cfg, seed=3)
    for o in outcomes:
        if o is not None:
            assert sum(m["kind"] in ("RTS", "CRS", "HTS", "CTS", "ACK") for m in o["messages"]) == 5

    prices = cs.price(cfg)
    assert prices["lambda"] >= 0.0

    print(f"coopstream {cs.__version__}: smoke test passed "
          f"(lambda {summary['lambda']:.3f}, far-user coop {summary['users'][-1]['cooperation_probability']:.2f})")


if __name__ == "__main__":
    main()
