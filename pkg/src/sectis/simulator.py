"""Round orchestration: training, validation, aggregation, experiment loop."""

from __future__ import annotations

import dataclasses
import io
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._rng import derive_rng
from .attacks import AttackConfig, apply_attack_plan
from .cas import BlobStore, Digest
from .commitments import GroupParams, setup_params
from .data import (
    Dataset,
    MinMaxScaler,
    default_means,
    iid_shards,
    load_csv,
    make_blobs,
    train_test_split,
)
from .errors import ConfigInvalid, DatasetLoadError, SectisError
from .ledger import Ledger
from .nn import Hyperparams, ModelWeights, evaluate, fedavg, init_model, train_local
from .reputation import ReputationState, rank_top_k, score_round
from .validation import (
    ValidatorTestSet,
    check_consistency,
    collect_outputs,
    run_validation,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    n_clients: int = 10
    rounds: int = 50
    lr: float = 0.01
    local_epochs: int = 5
    batch_size: int = 32
    alpha: float = 0.5
    r0: float = 1.0
    top_fraction: float = 0.7
    n_validators: int | None = None  # None: every client validates
    eligibility: float = 0.5
    suspension_threshold: float = 0.5
    suspension_window: int = 5
    attack: AttackConfig = field(default_factory=AttackConfig)
    dataset: str = "synthetic"
    label_column: str | None = None
    synthetic_total: int = 4000
    synthetic_overlap: float = 1.6
    normalize: bool = True
    train_split: float = 0.8
    holdout_fraction: float = 0.2
    seed: int = 0
    group: str = "modp2048"
    centroid: str = "mean"
    include_self: bool = True
    use_reputation: bool = True
    per_node_seeds: bool = True

    @property
    def hyperparams(self) -> Hyperparams:
        return Hyperparams(self.lr, self.local_epochs, self.batch_size, self.rounds)

    @property
    def validator_count(self) -> int:
        return self.n_clients if self.n_validators is None else self.n_validators

    def validate(self) -> None:
        problems = []
        if self.n_clients < 1:
            problems.append("n_clients must be >= 1")
        if self.rounds < 0:
            problems.append("rounds must be >= 0")
        if not (self.lr >= 0 and self.local_epochs >= 1 and self.batch_size >= 1):
            problems.append("lr >= 0, local_epochs >= 1, batch_size >= 1 required")
        if not 0.0 <= self.alpha <= 1.0:
            problems.append("alpha must lie in [0, 1]")
        if not 0.0 <= self.r0 <= 1.0:
            problems.append("r0 must lie in [0, 1]")
        if not 0.0 < self.top_fraction <= 1.0:
            problems.append("top_fraction must lie in (0, 1]")
        if self.use_reputation and not 1 <= self.validator_count <= self.n_clients:
            problems.append("need 1 <= n_validators <= n_clients")
        if not 0.0 < self.train_split < 1.0 or not 0.0 < self.holdout_fraction < 1.0:
            problems.append("split ratios must lie in (0, 1)")
        if self.centroid not in ("mean", "medoid"):
            problems.append("centroid must be 'mean' or 'medoid'")
        ids = set(self.attack.byzantine_ids) | set(self.attack.faulty_validator_map) \
            | set(self.attack.faulty_validator_map.values())
        if any(not 0 <= i < self.n_clients for i in ids):
            problems.append(f"attack names nodes outside 0..{self.n_clients - 1}")
        if problems:
            raise ConfigInvalid("; ".join(problems))
        if self.use_reputation:
            self.attack.check_fault_bound(self.validator_count)

    def to_flat(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, AttackConfig):
                for k, v in value.describe().items():
                    out[f"attack.{k}"] = v
            else:
                out[f.name] = value
        return out


@dataclass
class Client:
    node_id: int
    address: str
    clean_train: Dataset
    holdout: Dataset
    train: Dataset = None
    testset: ValidatorTestSet = None

    def __post_init__(self):
        if self.train is None:
            self.train = self.clean_train
        if self.testset is None:
            self.testset = ValidatorTestSet(self.holdout)


@dataclass
class Network:
    config: ExperimentConfig
    cas: BlobStore
    ledger: Ledger
    params: GroupParams
    clients: dict
    global_test: Dataset
    gm_digest: Digest
    reputation: ReputationState
    attack_log: list = field(default_factory=list)
    # test hook: validator id -> callable(model_id, proof) -> proof
    proof_tamper: dict = field(default_factory=dict)


@dataclass
class MetricsLog:
    metrics: list = field(default_factory=list)     # (round, f1, ctmr, source_recall, f1_micro)
    reputation: list = field(default_factory=list)  # (round, node, P, T, R, selected)
    rounds: list = field(default_factory=list)      # dict per round
    network: Network | None = field(default=None, repr=False, compare=False)

    def metrics_csv(self) -> str:
        return _csv(["round", "f1", "ctmr", "source_recall"], [m[:4] for m in self.metrics])

    def reputation_csv(self) -> str:
        return _csv(["round", "node_id", "P", "T", "R", "selected"], self.reputation)

    def rounds_csv(self) -> str:
        cols = ["round", "validators", "aggregator", "accepted", "rejected",
                "excluded_validators", "skipped", "selected", "f1_micro"]
        return _csv(cols, [[r[c] for c in cols] for r in self.rounds])

    def reputation_matrix(self) -> dict:
        """node id -> list of R per round (NaN where not scored)."""
        out: dict = {}
        for k, node, _, _, r, _ in self.reputation:
            out.setdefault(node, []).append(r)
        return out


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    if isinstance(value, (list, tuple)):
        return " ".join(str(v) for v in value)
    return str(value)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _seed_int(seed: int, op: str, *keys: int) -> int:
    return int(derive_rng(seed, op, *keys).integers(2**63))


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset == "synthetic":
        means = default_means(8, overlap=config.synthetic_overlap)
        return make_blobs(_seed_int(config.seed, "synthetic"), config.synthetic_total, means=means)
    path = Path(config.dataset)
    if not path.exists():
        raise DatasetLoadError(f"dataset {path} not found")
    return load_csv(path, config.label_column)


def build_network(config: ExperimentConfig, data: Dataset | None = None) -> Network:
    """Split data, register nodes, publish parameters and the initial model."""
    config.validate()
    if data is None:
        data = load_dataset(config)
    train, test = train_test_split(data, config.train_split, derive_rng(config.seed, "split"))
    if config.normalize:
        scaler = MinMaxScaler().fit(train.features)
        train, test = scaler.transform(train), scaler.transform(test)
    shards = iid_shards(train, config.n_clients, derive_rng(config.seed, "shards"))

    cas = BlobStore()
    ledger = Ledger(cas, r0=config.r0, eligibility=config.eligibility,
                    suspension_threshold=config.suspension_threshold,
                    suspension_window=config.suspension_window)
    params = setup_params(config.seed, config.group)
    ledger.publish_params(params)

    clients = {}
    for i, shard in enumerate(shards):
        node = ledger.register_node(f"org-{i}")
        local_train, holdout = train_test_split(
            shard, 1.0 - config.holdout_fraction, derive_rng(config.seed, "holdout", i))
        clients[node.node_id] = Client(node.node_id, node.address, local_train, holdout)

    gm = init_model(_seed_int(config.seed, "init"), data.n_features, data.n_classes)
    network = Network(
        config=config, cas=cas, ledger=ledger, params=params, clients=clients,
        global_test=test, gm_digest=cas.put(gm.to_bytes()),
        reputation=ReputationState(config.alpha, config.r0),
    )
    if not config.attack.is_empty:
        apply_attack_plan(network, config.attack)
    return network


def run_round(net: Network, k: int) -> dict:
    """One full protocol round; returns a summary and leaves the round Closed."""
    cfg = net.config
    ledger, cas = net.ledger, net.cas
    hp = cfg.hyperparams
    gm = ModelWeights.from_bytes(cas.get(net.gm_digest))

    # local training
    skipped = []
    models = {}
    for node_id in ledger.active_nodes():
        client = net.clients[node_id]
        seed = _seed_int(cfg.seed, "train", k, node_id if cfg.per_node_seeds else 0)
        try:
            w = train_local(gm, client.train, hp, seed)
            digest = cas.put(w.to_bytes())
            ledger.submit_local_model(k, node_id, digest)
            ledger.submit_verifier_address(k, node_id, ledger.deploy_verifier(node_id, digest))
        except SectisError as exc:
            log.warning("round %d: node %d skipped (%s)", k, node_id, exc)
            skipped.append(node_id)
            continue
        models[node_id] = digest
    if not models:
        raise SectisError(f"round {k}: no local model was submitted")

    accepted = rejected = 0
    excluded = []
    if cfg.use_reputation:
        eligible = len(ledger.eligible_validators())
        count = min(cfg.validator_count, eligible)
        if count < cfg.validator_count:
            log.warning("round %d: only %d eligible validators", k, eligible)
        validators = ledger.select_validators(k, count, derive_rng(cfg.seed, "validators", k))
        for v in validators:
            results = run_validation(
                v, k, ledger, cas, net.clients[v].testset, net.params,
                include_self=cfg.include_self, tamper=net.proof_tamper.get(v))
            for _, _, status in results:
                if status.value == "Accepted":
                    accepted += 1
                else:
                    rejected += 1
        consistent = [v for v in validators if check_consistency(ledger, k, v)]
        excluded = [v for v in validators if v not in consistent]
    else:
        validators = ledger.select_validators(k, 0, derive_rng(cfg.seed, "validators", k))
        consistent = []

    aggregator = ledger.select_aggregator(k, derive_rng(cfg.seed, "aggregator", k))

    if cfg.use_reputation:
        outputs = {v: collect_outputs(ledger, cas, k, v) for v in consistent}
        scores = score_round(outputs, cfg.centroid)
        unscored = sorted(set(models) - set(scores.trust))
        for node_id in unscored:
            log.warning("round %d: model %d has no accepted validation", k, node_id)
            del models[node_id]
        skipped.extend(unscored)
        errors, trusts = scores.error, scores.trust
        reps = {i: net.reputation.update(i, k, trusts[i]) for i in sorted(trusts)}
        if not reps:
            raise SectisError(f"round {k}: no model could be scored")
        selected = rank_top_k(reps, cfg.top_fraction)
    else:
        nan = float("nan")
        errors = {i: nan for i in models}
        trusts = {i: nan for i in models}
        reps = {i: nan for i in models}
        selected = set(models)

    ledger.update_scores(k, aggregator, trusts, reps)
    chosen = [ModelWeights.from_bytes(cas.get(models[i])) for i in sorted(selected)]
    new_gm = fedavg(chosen)
    net.gm_digest = cas.put(new_gm.to_bytes())
    ledger.publish_global_model(k, net.gm_digest)

    return {
        "round": k,
        "validators": validators,
        "aggregator": aggregator,
        "accepted": accepted,
        "rejected": rejected,
        "excluded_validators": excluded,
        "skipped": sorted(skipped),
        "selected": sorted(selected),
        "error": errors,
        "trust": trusts,
        "reputation": reps,
        "gm": new_gm,
    }


def run_experiment(config: ExperimentConfig, data: Dataset | None = None,
                   network: Network | None = None) -> MetricsLog:
    """Build the network, apply attacks and run ``config.rounds`` rounds."""
    net = network if network is not None else build_network(config, data)
    cfg = net.config
    s, t = cfg.attack.source_class, cfg.attack.target_class
    out = MetricsLog(network=net)
    for k in range(1, cfg.rounds + 1):
        summary = run_round(net, k)
        m = evaluate(summary["gm"], net.global_test, s, t)
        out.metrics.append((k, m.f1_macro, m.ctmr, m.source_recall, m.f1_micro))
        for node_id in sorted(summary["trust"]):
            out.reputation.append((
                k, node_id,
                float(summary["error"][node_id]),
                float(summary["trust"][node_id]),
                float(summary["reputation"][node_id]),
                node_id in summary["selected"],
            ))
        out.rounds.append({
            key: summary[key] for key in
            ("round", "validators", "aggregator", "accepted", "rejected",
             "excluded_validators", "skipped", "selected")
        } | {"f1_micro": m.f1_micro})
        log.info("round %d: f1=%.4f ctmr=%.2f recall=%.2f", k, m.f1_macro, m.ctmr, m.source_recall)
    return out


def run_no_reputation_baseline(config: ExperimentConfig, data: Dataset | None = None) -> MetricsLog:
    """Same experiment with every local model averaged and no validators."""
    cfg = dataclasses.replace(config, use_reputation=False, top_fraction=1.0)
    return run_experiment(cfg, data)


def version_string() -> str:
    import subprocess

    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
            cwd=Path(__file__).parent, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        described = ""
    return f"{__version__}+{described}" if described else __version__


def manifest_text(config: ExperimentConfig, result: MetricsLog) -> str:
    lines = {"version": version_string(), "seed": config.seed}
    lines.update(config.to_flat())
    net = result.network
    if net is not None:
        lines["group"] = config.group
        lines["params_id"] = net.params.id
        for i, entry in enumerate(net.attack_log):
            lines[f"attack_plan.{i}"] = entry
    if result.metrics:
        k, f1, ctmr, recall, micro = result.metrics[-1]
        lines.update({"final_round": k, "final_f1": f1, "final_f1_micro": micro,
                      "final_ctmr": ctmr, "final_source_recall": recall})
    return "".join(f"{k}={_fmt(v)}\n" for k, v in lines.items())


def write_outputs(result: MetricsLog, config: ExperimentConfig, out_dir) -> Path:
    """Write metrics.csv, reputation.csv, rounds.csv, manifest.txt and txlog.tsv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(result.metrics_csv())
    (out / "reputation.csv").write_text(result.reputation_csv())
    (out / "rounds.csv").write_text(result.rounds_csv())
    (out / "manifest.txt").write_text(manifest_text(config, result))
    if result.network is not None:
        (out / "txlog.tsv").write_text(result.network.ledger.export_log())
    return out
