import dataclasses

import numpy as np
import pytest

from sectis.attacks import AttackConfig
from sectis.commitments import tamper
from sectis.errors import ConfigInvalid
from sectis.ledger import check_log
from sectis.nn import ModelWeights
from sectis.simulator import (
    ExperimentConfig,
    build_network,
    manifest_text,
    run_experiment,
    run_no_reputation_baseline,
    run_round,
    write_outputs,
)

FAST = dict(group="toy64", synthetic_total=1500)


def test_one_honest_round():
    net = build_network(ExperimentConfig(rounds=1, **FAST))
    s = run_round(net, 1)
    assert len(s["trust"]) == 10
    assert len(s["selected"]) == 7
    assert s["accepted"] == 100 and s["rejected"] == 0
    assert all(0.0 <= p <= 1.0 for p in s["error"].values())
    rr = net.ledger.round(1)
    assert rr.gm_digest == net.gm_digest
    assert net.ledger.round(2).k == 2


def test_single_client_full_fraction_keeps_local_model():
    net = build_network(ExperimentConfig(n_clients=1, rounds=1, top_fraction=1.0, **FAST))
    s = run_round(net, 1)
    local = net.cas.get(net.ledger.round(1).lm_digests[0])
    assert s["gm"].to_bytes() == local


def test_identical_clients_get_perfect_trust():
    cfg = ExperimentConfig(rounds=1, per_node_seeds=False, **FAST)
    net = build_network(cfg)
    shared = net.clients[0].train
    for c in net.clients.values():
        c.train = shared
    s = run_round(net, 1)
    # mean-then-renormalise leaves at most a few ulps of drift
    assert all(p == pytest.approx(0.0, abs=1e-12) for p in s["error"].values())
    assert all(t == pytest.approx(1.0, abs=1e-12) for t in s["trust"].values())
    assert len(set(s["error"].values())) == 1


def test_zero_rounds():
    res = run_experiment(ExperimentConfig(rounds=0, **FAST))
    assert res.metrics == [] and res.reputation == []
    assert res.metrics_csv() == "round,f1,ctmr,source_recall\n"


def test_same_seed_same_outputs():
    cfg = ExperimentConfig(rounds=3, **FAST,
                           attack=AttackConfig(byzantine_ids={5}, flip_fraction=0.5))
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert a.metrics_csv() == b.metrics_csv()
    assert a.reputation_csv() == b.reputation_csv()
    assert a.rounds_csv() == b.rounds_csv()
    assert a.network.ledger.export_log() == b.network.ledger.export_log()
    c = run_experiment(dataclasses.replace(cfg, seed=1))
    assert c.reputation_csv() != a.reputation_csv()


def test_baseline_matches_full_fraction_on_clean_data():
    cfg = ExperimentConfig(rounds=3, **FAST)
    base = run_no_reputation_baseline(cfg)
    full = run_experiment(dataclasses.replace(cfg, top_fraction=1.0))
    assert [m[1:] for m in base.metrics] == [m[1:] for m in full.metrics]
    assert base.metrics_csv().splitlines()[0] == full.metrics_csv().splitlines()[0]
    assert base.reputation_csv().splitlines()[0] == full.reputation_csv().splitlines()[0]
    assert len(base.reputation) == len(full.reputation) == 30
    assert ",,," in base.reputation_csv()


def test_participant_conservation_and_log():
    cfg = ExperimentConfig(rounds=4, **FAST, attack=AttackConfig(byzantine_ids={2, 5}, flip_fraction=0.5))
    res = run_experiment(cfg)
    for r in res.rounds:
        assert len(r["selected"]) + len(r["skipped"]) <= 10
        assert len(r["selected"]) == 7
    check_log(res.network.ledger.log)


def test_rejected_validator_is_excluded():
    net = build_network(ExperimentConfig(rounds=1, **FAST))
    net.proof_tamper[3] = lambda m, p: tamper(p, revealed_model_digest=p.revealed_data_digest)
    s = run_round(net, 1)
    assert s["excluded_validators"] == [3]
    assert s["rejected"] == 10
    assert len(s["trust"]) == 10


def test_min_reputation_settles_on_honest_run():
    res = run_experiment(ExperimentConfig(rounds=12, **FAST))
    mat = res.reputation_matrix()
    mins = [min(mat[i][k] for i in mat) for k in range(12)]
    assert all(m > 0.8 for m in mins)
    assert all(abs(b - a) < 0.05 for a, b in zip(mins[5:], mins[6:]))


def test_invalid_config():
    with pytest.raises(ConfigInvalid):
        ExperimentConfig(n_validators=11).validate()
    with pytest.raises(ConfigInvalid):
        ExperimentConfig(attack=AttackConfig(byzantine_ids={10})).validate()
    with pytest.raises(ConfigInvalid):
        ExperimentConfig(top_fraction=0.0).validate()


def test_write_outputs_and_manifest(tmp_path):
    cfg = ExperimentConfig(rounds=2, **FAST, attack=AttackConfig(byzantine_ids={5}, flip_fraction=0.3))
    res = run_experiment(cfg)
    out = write_outputs(res, cfg, tmp_path / "o")
    names = sorted(p.name for p in out.iterdir())
    assert names == ["manifest.txt", "metrics.csv", "reputation.csv", "rounds.csv", "txlog.tsv"]
    manifest = manifest_text(cfg, res)
    assert "seed=0\n" in manifest and "group=toy64\n" in manifest
    assert "attack.byzantine_ids=5\n" in manifest or "attack.byzantine_ids=[5]" in manifest
    assert "params_id=" in manifest and "final_f1=" in manifest
    assert len((out / "reputation.csv").read_text().splitlines()) == 21
    ModelWeights.from_bytes(res.network.cas.get(res.network.gm_digest))
