"""``dab`` command line: train, generate, ablate, compare, validate.

Every run writes ``config.json`` (the resolved configuration) into its output
directory, so results can be regenerated from the snapshot alone. Flags win
over values from ``--config``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import baselines as BL
from . import constraints as C
from . import metrics as MX
from .lm import corpus as corpus_mod
from .lm.model import LMBundle
from .lm.train import TrainConfig, train_tiny_lm
from .lm.vocab import Vocabulary
from .lm.weights import WeightFileError, load_lm, save_lm
from .numeric import make_rng
from .sampler import SamplerConfig, SamplerTrace, run_dab, write_trace_csv
from .validation import run_checks

log = logging.getLogger("dab")

EXIT_OK, EXIT_VALIDATION, EXIT_USAGE = 0, 1, 2
TASKS = ("sentiment", "keyword")
ABLATABLE = ("weight", "tau", "topk")


class ConfigError(ValueError):
    """Bad configuration or missing input; exit code 2."""


@dataclass
class RunConfig:
    # paths
    corpus: str | None = None
    lm: str | None = None
    classifier: str | None = None
    out: str = "run"
    # task
    task: str = "sentiment"
    prompts: list[str] | None = None
    keywords: list[str] = field(default_factory=lambda: ["router"])
    threshold: float | None = None
    # sampler
    steps: int = 20
    length: int = 12
    tau: float = 0.1
    topk: int | None = None
    weight: float = 1.05
    # continuous baseline
    gamma: float = 2.0
    sigma: float = 0.05
    # run control
    chains: int = 20
    seed: int = 0
    threads: int = 1
    timing: bool = False
    # training
    synthetic_docs: int | None = None
    lm_steps: int = 600
    classifier_steps: int = 400
    # ablation
    param: str = "weight"
    values: list[float] = field(default_factory=lambda: [0.0, 1.05])

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.chains < 1 or self.threads < 1:
            raise ConfigError("chains and threads must be >= 1")
        if self.param not in ABLATABLE:
            raise ConfigError(f"param must be one of {ABLATABLE}")
        try:
            self.sampler()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def sampler(self, **overrides) -> SamplerConfig:
        fields = dict(steps=self.steps, length=self.length, tau=self.tau, topk=self.topk,
                      weight=self.weight, seed=self.seed)
        fields.update(overrides)
        return SamplerConfig(**fields)

    def resolved_prompts(self) -> list[str]:
        if self.prompts:
            return list(self.prompts)
        return list(corpus_mod.SENTIMENT_PROMPTS if self.task == "sentiment" else corpus_mod.KEYWORD_PROMPTS)

    def resolved_threshold(self) -> float:
        if self.threshold is not None:
            return self.threshold
        # a present keyword scores >= 1, an absent one about tau_s*log(n)
        return 0.0 if self.task == "sentiment" else 0.5

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**data)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return RunConfig.from_dict(data)


def dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(out / "config.json", cfg.to_dict())
    return out


# model loading ---------------------------------------------------------------
def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} path given")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def load_models(cfg: RunConfig) -> tuple[LMBundle, C.Constraint]:
    try:
        bundle = load_lm(_require(cfg.lm, "LM weights"))
        if cfg.task == "sentiment":
            constraint = C.load_classifier(_require(cfg.classifier, "classifier weights"),
                                           bundle.embeddings, bundle.vocabulary.tokens)
        else:
            try:
                ids = [bundle.vocabulary.index(k) for k in cfg.keywords]
            except KeyError as exc:
                raise ConfigError(f"keyword not in vocabulary: {exc}") from exc
            constraint = C.KeywordConstraint(ids, len(bundle.vocabulary))
    except WeightFileError as exc:
        raise ConfigError(str(exc)) from exc
    return bundle, constraint


def _encode_prompts(bundle: LMBundle, prompts: Sequence[str]) -> list[tuple[int, ...]]:
    try:
        return [tuple(bundle.vocabulary.encode(p)) for p in prompts]
    except KeyError as exc:
        raise ConfigError(f"prompt token not in vocabulary: {exc}") from exc


# chains ----------------------------------------------------------------------
def run_chains(fn: Callable[[int], tuple], chains: int, threads: int) -> list:
    """Run ``fn(chain)`` for every chain; results come back in chain order."""
    if threads == 1:
        return [fn(c) for c in range(chains)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(chains)))


def _dab_chains(cfg: RunConfig, bundle, constraint, prompts, sampler: SamplerConfig):
    def one(chain: int):
        prompt = prompts[chain % len(prompts)]
        return prompt, run_dab(bundle, constraint, prompt, sampler, make_rng(cfg.seed, chain))[1]
    return run_chains(one, cfg.chains, cfg.threads)


def summarize(results: Sequence[tuple[tuple[int, ...], SamplerTrace]], threshold: float) -> dict[str, list[float]]:
    """Per-chain metric values, keyed by metric name."""
    per: dict[str, list[float]] = {k: [] for k in (
        "satisfaction", "best_f", "best_perplexity", "mean_hops", "mean_unique",
        "repeated_trigram_rate", "lm_forward_per_sweep", "lm_backward_per_sweep",
        "constraint_backward_per_sweep")}
    for _, trace in results:
        best = trace.best
        stats = MX.exploration(trace)
        per["satisfaction"].append(MX.satisfaction_rate([best.f_value], threshold))
        per["best_f"].append(best.f_value)
        per["best_perplexity"].append(best.perplexity)
        per["mean_hops"].append(stats.mean_hops)
        per["mean_unique"].append(stats.mean_unique)
        per["repeated_trigram_rate"].append(MX.repeated_trigram_rate(best.response))
        per["lm_forward_per_sweep"].append(float(np.mean([s.lm_forward_count for s in trace.steps])))
        per["lm_backward_per_sweep"].append(float(np.mean([s.lm_backward_count for s in trace.steps])))
        per["constraint_backward_per_sweep"].append(
            float(np.mean([s.constraint_backward_count for s in trace.steps])))
    return per


# subcommands -----------------------------------------------------------------
def cmd_train(cfg: RunConfig) -> int:
    if cfg.corpus is None and cfg.synthetic_docs is None:
        raise ConfigError("train needs --corpus PATH or --synthetic N")
    if cfg.corpus is not None:
        path = _require(cfg.corpus, "corpus")
        try:
            docs = corpus_mod.read_corpus(path)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        out = _prepare_out(cfg)
    else:
        out = _prepare_out(cfg)
        docs = corpus_mod.synthetic_corpus(cfg.synthetic_docs, make_rng(cfg.seed, 1))
        corpus_mod.write_corpus(out / "corpus.txt", docs)
    vocab = Vocabulary.from_corpus(docs)
    ids = [vocab.encode(d) for d in docs]
    bundle = train_tiny_lm(ids, vocab, make_rng(cfg.seed, 2), TrainConfig(steps=cfg.lm_steps))
    save_lm(out / "lm.weights", bundle)
    labeler = lambda window: corpus_mod.sentiment_label([vocab.tokens[t] for t in window])
    clf = C.train_classifier(bundle.embeddings, ids, labeler, make_rng(cfg.seed, 3),
                             C.ClassifierTrainConfig(steps=cfg.classifier_steps))
    C.save_classifier(out / "classifier.weights", clf, vocab.tokens)
    print(f"wrote {out / 'lm.weights'} and {out / 'classifier.weights'}")
    return EXIT_OK


def cmd_generate(cfg: RunConfig) -> int:
    bundle, constraint = load_models(cfg)
    prompts = _encode_prompts(bundle, cfg.resolved_prompts())
    out = _prepare_out(cfg)
    tic = time.perf_counter()
    results = _dab_chains(cfg, bundle, constraint, prompts, cfg.sampler())
    elapsed = time.perf_counter() - tic
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    for chain, (_, trace) in enumerate(results):
        write_trace_csv(traces / f"chain_{chain:02d}.csv", trace, bundle.vocabulary.tokens, wall_clock=cfg.timing)
    summary = MX.write_report(out / "metrics.json", summarize(results, cfg.resolved_threshold()))
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        for chain, (prompt, trace) in enumerate(results):
            best = trace.best
            fh.write(f"chain {chain:02d} f={best.f_value:.4f} ppl={best.perplexity:.4f} | "
                     f"{bundle.vocabulary.decode(prompt)} || {bundle.vocabulary.decode(best.response)}\n")
        for name, stats in summary.items():
            fh.write(f"{name}: {stats['mean']:.4f} +- {stats['stderr']:.4f}\n")
    if cfg.timing:
        n, s = cfg.length, cfg.steps
        dump_json(out / "timing.json", {
            "elapsed_seconds": elapsed,
            "tokens_per_second": MX.tokens_per_second(n, s * cfg.chains, elapsed),
        })
    print(f"satisfaction {summary['satisfaction']['mean']:.3f}, "
          f"best perplexity {summary['best_perplexity']['mean']:.3f}; outputs in {out}")
    return EXIT_OK


ABLATION_COLUMNS = ("param", "value", "satisfaction", "best_f", "best_perplexity", "mean_hops", "mean_unique")


def ablation_rows(cfg: RunConfig, bundle, constraint, prompts) -> list[dict]:
    if not cfg.values:
        raise ConfigError("ablation needs at least one value")
    rows = []
    for v in sorted(cfg.values):
        value = int(v) if cfg.param == "topk" else float(v)
        try:
            sampler = cfg.sampler(**{cfg.param: value})
            sampler.resolved_topk(bundle.config.vocab_size)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        summary = MX.report(summarize(_dab_chains(cfg, bundle, constraint, prompts, sampler),
                                      cfg.resolved_threshold()))
        rows.append({"param": cfg.param, "value": value,
                     **{k: summary[k]["mean"] for k in ABLATION_COLUMNS[2:]}})
    return rows


def cmd_ablate(cfg: RunConfig) -> int:
    bundle, constraint = load_models(cfg)
    prompts = _encode_prompts(bundle, cfg.resolved_prompts())
    out = _prepare_out(cfg)
    rows = ablation_rows(cfg, bundle, constraint, prompts)
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    print(f"wrote {out / 'ablation.csv'} ({len(rows)} rows)")
    return EXIT_OK


COMPARE_METHODS = ("dab", "continuous", "continuous_normalized", "greedy")
COMPARE_COLUMNS = ("method", "step", "hops", "unique_tokens", "perplexity", "f_value",
                   "lm_forward_count", "lm_backward_count", "constraint_backward_count")


def compare_traces(cfg: RunConfig, bundle, constraint, prompts) -> dict[str, list[SamplerTrace]]:
    def baseline(normalized: bool):
        bcfg = BL.ContinuousConfig(steps=cfg.steps, length=cfg.length, gamma=cfg.gamma, sigma=cfg.sigma,
                                   weight=cfg.weight, use_normalizer=normalized, seed=cfg.seed)

        def one(chain: int):
            prompt = prompts[chain % len(prompts)]
            return prompt, BL.run_continuous(bundle, constraint, prompt, bcfg, make_rng(cfg.seed, chain))[1]
        return run_chains(one, cfg.chains, cfg.threads)

    def greedy(chain: int):
        prompt = prompts[chain % len(prompts)]
        return prompt, BL.run_greedy(bundle, prompt, cfg.steps, cfg.length, constraint)[1]

    return {
        "dab": [t for _, t in _dab_chains(cfg, bundle, constraint, prompts, cfg.sampler())],
        "continuous": [t for _, t in baseline(False)],
        "continuous_normalized": [t for _, t in baseline(True)],
        "greedy": [t for _, t in run_chains(greedy, cfg.chains, cfg.threads)],
    }


def compare_rows(traces: dict[str, list[SamplerTrace]]) -> list[dict]:
    """Per-step means over chains; unique tokens are cumulative up to each step."""
    rows = []
    for method in COMPARE_METHODS:
        chain_traces = traces[method]
        for step in range(len(chain_traces[0])):
            col = [t.steps[step] for t in chain_traces]
            unique = [MX.unique_tokens(t.responses[: step + 1])[1] for t in chain_traces]
            rows.append({
                "method": method,
                "step": step,
                "hops": float(np.mean([s.hops for s in col])),
                "unique_tokens": float(np.mean(unique)),
                "perplexity": float(np.mean([s.perplexity for s in col])),
                "f_value": float(np.mean([s.f_value for s in col])),
                "lm_forward_count": float(np.mean([s.lm_forward_count for s in col])),
                "lm_backward_count": float(np.mean([s.lm_backward_count for s in col])),
                "constraint_backward_count": float(np.mean([s.constraint_backward_count for s in col])),
            })
    return rows


def cmd_compare(cfg: RunConfig) -> int:
    bundle, constraint = load_models(cfg)
    prompts = _encode_prompts(bundle, cfg.resolved_prompts())
    out = _prepare_out(cfg)
    traces = compare_traces(cfg, bundle, constraint, prompts)
    rows = compare_rows(traces)
    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    summary = {m: MX.report(summarize([((), t) for t in traces[m]], cfg.resolved_threshold()))
               for m in COMPARE_METHODS}
    dump_json(out / "metrics.json", summary)
    for m in COMPARE_METHODS:
        print(f"{m:>22}: hops {summary[m]['mean_hops']['mean']:.3f}  "
              f"unique {summary[m]['mean_unique']['mean']:.3f}  "
              f"best ppl {summary[m]['best_perplexity']['mean']:.3f}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, gradient_fn=None) -> int:
    results = run_checks(seed=cfg.seed) if gradient_fn is None else run_checks(gradient_fn, seed=cfg.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "ablate": cmd_ablate,
    "compare": cmd_compare,
    "validate": cmd_validate,
}


# argument parsing ---------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--steps", type=int)
    common.add_argument("--tau", type=float)
    common.add_argument("--topk", type=int)
    common.add_argument("--weight", type=float)
    common.add_argument("--length", type=int)
    common.add_argument("--chains", type=int)
    common.add_argument("--task", choices=TASKS)
    common.add_argument("--lm", help="LM weight file")
    common.add_argument("--classifier", help="classifier weight file")
    common.add_argument("--timing", action="store_true", default=None,
                        help="record wall-clock times (outputs stop being byte-stable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    train = sub.add_parser("train", parents=[common], help="train the LM and sentiment classifier")
    train.add_argument("--corpus", help="whitespace-tokenized corpus, one sequence per line")
    train.add_argument("--synthetic", type=int, dest="synthetic_docs", metavar="N",
                       help="generate an N-document synthetic corpus instead")
    train.add_argument("--lm-steps", type=int, dest="lm_steps")
    train.add_argument("--classifier-steps", type=int, dest="classifier_steps")
    sub.add_parser("generate", parents=[common], help="run DAB chains")
    ablate = sub.add_parser("ablate", parents=[common], help="sweep one sampler parameter")
    ablate.add_argument("--param", choices=ABLATABLE)
    ablate.add_argument("--values", type=lambda s: [float(v) for v in s.split(",")],
                        help="comma-separated values")
    compare = sub.add_parser("compare", parents=[common], help="DAB vs continuous baselines vs greedy")
    compare.add_argument("--gamma", type=float)
    compare.add_argument("--sigma", type=float)
    sub.add_parser("validate", parents=[common], help="run the oracle checks")
    return parser


_NOT_CONFIG = {"command", "config", "verbose"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    for key, val in vars(args).items():
        if key not in _NOT_CONFIG and val is not None:
            setattr(cfg, key, val)
    cfg.validate()
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"dab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
