"""Command-line entry point.

Subcommands wrap the library: ``generate`` (watermarked sampling from a toy
model file), ``detect`` (beta / soft / multi-key detection of a token file),
``bias`` (expected-total-variation audit of one distribution), ``verify-
theorems`` (randomized audit of the bias relationships), ``experiment``
(delta and detection tables), and ``attack`` (paraphrase-attack AUC sweep).

Flag precedence is flags > ``--config`` JSON file > built-in defaults
(n-gram 5, score scale 10, green fraction 0.5).  Every JSON output embeds the
resolved configuration, the toolkit version, and a short hash of both;
``detect`` always exits 0 when it ran, reporting its decision as data.  Bad
flags exit 2 (argparse), runtime failures exit 1 with a diagnostic.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from typing import Any, Sequence

import numpy as np

from . import __version__
from .biaslab import make_bias_report, verify_theorems
from .core import TokenDistribution, TokenSequence, normalize
from .detector import (
    DEFAULT_FPR,
    DEFAULT_SCORE_SCALE,
    detect_beta,
    detect_multikey,
    detect_soft,
    z_for_fpr,
)
from .errors import WmkitError
from .generator import GeneratorConfig, generate, parse_sampler, sampler_label
from .harness import (
    build_toylm,
    default_attack_spec,
    default_delta_spec,
    default_detection_spec,
    ExperimentSpec,
    run_attack_sweep,
    run_detection_table,
    run_strong_experiment,
    write_attack_csv,
    write_delta_csv,
    write_detection_csv,
)
from .keying import DEFAULT_NGRAM, SecretKey
from .pda import Beta, PermuteReweight, Soft, parse_rule

_DEFAULTS = {"ngram": DEFAULT_NGRAM, "C": DEFAULT_SCORE_SCALE, "gamma": 0.5}


def _resolved(args: argparse.Namespace, keys: Sequence[str]) -> dict[str, Any]:
    """Resolve each key as flag > config file > default."""
    config: dict[str, Any] = {}
    path = getattr(args, "config", None)
    if path:
        with open(path) as fh:
            config = json.load(fh)
    out: dict[str, Any] = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in config:
            out[key] = config[key]
        elif key in _DEFAULTS:
            out[key] = _DEFAULTS[key]
        else:
            out[key] = None
    return out


def _config_hash(cfg: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:12]


def _with_meta(payload: dict[str, Any], cfg: dict[str, Any]) -> dict[str, Any]:
    payload["config"] = cfg
    payload["version"] = __version__
    payload["config_hash"] = _config_hash(cfg)
    return payload


def _emit(payload: dict[str, Any], out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _write_config_sidecar(csv_path: str, cfg: dict[str, Any]) -> None:
    with open(csv_path + ".config.json", "w") as fh:
        json.dump(_with_meta({}, cfg), fh, indent=2)
        fh.write("\n")


def _load_model(path: str):
    with open(path) as fh:
        spec = json.load(fh)
    return build_toylm(
        int(spec["vocab_size"]),
        int(spec.get("order", 2)),
        float(spec.get("concentration", 1.0)),
        int(spec.get("model_seed", 0)),
    )


def _missing(cfg: dict[str, Any], keys: Sequence[str]) -> int | None:
    absent = [k for k in keys if cfg.get(k) is None]
    if absent:
        print(
            f"wmkit: error: missing required option(s): {', '.join('--' + k for k in absent)}"
            " (pass as flags or via --config)",
            file=sys.stderr,
        )
        return 2
    return None


def _cmd_generate(args: argparse.Namespace) -> int:
    cfg = _resolved(args, ["rule", "sampler", "key", "model", "len", "seed", "prompt"])
    if (code := _missing(cfg, ["rule", "key", "model", "len"])) is not None:
        return code
    model = _load_model(cfg["model"])
    rule = parse_rule(cfg["rule"])
    sampler = parse_sampler(cfg["sampler"] or "ngram:5")
    secret = SecretKey.from_hex(cfg["key"])
    prompt_tokens = tuple(int(t) for t in (cfg["prompt"] or "").split(",") if t != "")
    prompt = TokenSequence(prompt_tokens, model.vocab_size)
    n = int(cfg["len"])
    gen_cfg = GeneratorConfig(
        rule=rule,
        sampler=sampler,
        secret=secret,
        max_len=max(n, 1),
        sampling_seed=int(cfg["seed"] or 0),
    )
    seq, trace = generate(model, prompt, n, gen_cfg)

    resolved = {
        "rule": cfg["rule"],
        "sampler": sampler_label(sampler),
        "key": cfg["key"],
        "model": cfg["model"],
        "len": n,
        "seed": int(cfg["seed"] or 0),
        "prompt": list(prompt_tokens),
        "ngram": getattr(sampler, "a", None),
        "C": DEFAULT_SCORE_SCALE,
    }
    _emit(
        _with_meta({"tokens": list(seq.tokens), "vocab_size": seq.vocab_size}, resolved),
        args.out,
    )
    if args.trace:
        steps = []
        for s in trace.steps:
            ctx: Any = None
            if s.context is not None:
                ctx = {"type": type(s.context).__name__.lower()}
                ctx.update(asdict(s.context))
            steps.append({"context": ctx, "watermarked": s.watermarked})
        with open(args.trace, "w") as fh:
            json.dump(_with_meta({"steps": steps}, resolved), fh, indent=2)
            fh.write("\n")
    return 0


def _cmd_detect(args: argparse.Namespace) -> int:
    if args.from_trace:
        with open(args.from_trace) as fh:
            trace_cfg = json.load(fh)["config"]
        for key in ("key", "ngram", "C"):
            if getattr(args, key, None) is None and trace_cfg.get(key) is not None:
                setattr(args, key, trace_cfg[key])
        if args.rule is None and trace_cfg.get("rule"):
            family = trace_cfg["rule"].split(":")[0]
            args.rule = family if family in ("beta", "soft", "pr") else None
    cfg = _resolved(args, ["rule", "key", "keys", "ngram", "C", "gamma", "fpr", "threshold"])
    if cfg["keys"] is None and (code := _missing(cfg, ["key"])) is not None:
        return code
    with open(args.tokens) as fh:
        obj = json.load(fh)
    text = TokenSequence(tuple(obj["tokens"]), int(obj["vocab_size"]))
    a = int(cfg["ngram"])
    C = float(cfg["C"])
    rule_name = (cfg["rule"] or "beta").split(":")[0]
    threshold = (
        float(cfg["threshold"])
        if cfg["threshold"] is not None
        else z_for_fpr(float(cfg["fpr"] if cfg["fpr"] is not None else DEFAULT_FPR))
    )

    if cfg["keys"]:
        with open(cfg["keys"]) as fh:
            sks = [SecretKey.from_hex(line) for line in fh if line.strip()]
        max_z, best = detect_multikey(text, sks, a, C)
        payload = {
            "max_z": max_z,
            "key_index": best,
            "n_keys": len(sks),
            "threshold": threshold,
            "decision": max_z > threshold,
        }
    else:
        sk = SecretKey.from_hex(cfg["key"])
        if rule_name == "soft":
            result = detect_soft(text, sk, a, float(cfg["gamma"]), threshold, dedup=args.dedup)
        else:
            result = detect_beta(text, sk, a, C, threshold, dedup=args.dedup)
        payload = result.to_dict()

    resolved = {k: cfg[k] for k in ("rule", "ngram", "C", "gamma", "fpr")}
    resolved["threshold"] = threshold
    resolved["dedup"] = bool(args.dedup)
    _emit(_with_meta(payload, resolved), args.out)
    return 0


def _cmd_bias(args: argparse.Namespace) -> int:
    cfg = _resolved(args, ["dist", "rule", "seed"])
    if (code := _missing(cfg, ["dist", "rule"])) is not None:
        return code
    with open(cfg["dist"]) as fh:
        probs = json.load(fh)["probs"]
    p = normalize(np.asarray(probs, dtype=np.float64))
    rule = parse_rule(cfg["rule"])
    report = make_bias_report(
        p,
        rule,
        exact=args.exact,
        mc_samples=int(float(args.mc)) if args.mc else None,
        seed=int(cfg["seed"] or 0),
    )
    resolved = {"dist": cfg["dist"], "rule": cfg["rule"], "exact": args.exact, "mc": args.mc, "seed": cfg["seed"]}
    _emit(_with_meta(report.to_dict(), resolved), args.out)
    return 0


def _cmd_verify_theorems(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    betas = tuple(float(b) for b in args.betas.split(","))
    failures = 0
    for trial in range(args.trials):
        n = int(rng.integers(2, args.nmax + 1))
        p = TokenDistribution(rng.dirichlet(np.full(n, args.dirichlet)))
        report = verify_theorems(p, betas)
        if not report.passed:
            failures += 1
            for check in report.failures():
                print(f"FAIL trial={trial} n={n} {check.name}: {check.detail}")
    status = "all-pass" if failures == 0 else f"{failures} failing trials"
    print(
        f"verify-theorems: trials={args.trials} nmax={args.nmax} "
        f"betas={','.join(f'{b:g}' for b in betas)} -> {status}"
    )
    return 0 if failures == 0 else 1


def _experiment_lm(args: argparse.Namespace):
    return build_toylm(args.vocab, args.order, args.alpha, args.model_seed)


def _experiment_spec(args: argparse.Namespace, rules) -> ExperimentSpec:
    base = (
        default_delta_spec(rules, seed=args.seed)
        if args.kind == "delta"
        else default_detection_spec(rules, seed=args.seed)
    )
    return ExperimentSpec(
        prompts=args.prompts or base.prompts,
        responses_per_prompt=args.responses or base.responses_per_prompt,
        length=args.length or base.length,
        rules=rules,
        seed=args.seed,
        ngram=args.ngram or DEFAULT_NGRAM,
    )


def _cmd_experiment(args: argparse.Namespace) -> int:
    rules = tuple(parse_rule(r) for r in args.rules.split(","))
    lm = _experiment_lm(args)
    spec = _experiment_spec(args, rules)
    secret = SecretKey.from_hex(args.key) if args.key else SecretKey.from_seed(spec.seed)
    resolved = {
        "kind": args.kind,
        "rules": args.rules,
        "vocab": args.vocab,
        "order": args.order,
        "alpha": args.alpha,
        "model_seed": args.model_seed,
        "prompts": spec.prompts,
        "responses": spec.responses_per_prompt,
        "length": spec.length,
        "seed": spec.seed,
        "ngram": spec.ngram,
        "calibrate": bool(args.calibrate),
    }
    if args.kind == "delta":
        rows = run_strong_experiment(lm, spec, secret)
        write_delta_csv(args.out, rows)
    else:
        detectable = [r for r in rules if isinstance(r, (Beta, PermuteReweight, Soft))]
        fprs = [float(f) for f in args.fprs.split(",")]
        table = run_detection_table(
            lm, spec, detectable, fprs, secret=secret, calibrate=args.calibrate
        )
        write_detection_csv(args.out, table)
        resolved["thresholds"] = "calibrated" if table.calibrated else "hoeffding"
    _write_config_sidecar(args.out, resolved)
    print(f"wrote {args.out}")
    return 0


def _cmd_attack(args: argparse.Namespace) -> int:
    rule = parse_rule(args.rule)
    lm = _experiment_lm(args)
    base = default_attack_spec((rule,), seed=args.seed)
    spec = ExperimentSpec(
        prompts=args.prompts or base.prompts,
        responses_per_prompt=args.responses or base.responses_per_prompt,
        length=args.length or base.length,
        rules=(rule,),
        seed=args.seed,
        ngram=args.ngram or DEFAULT_NGRAM,
    )
    secret = SecretKey.from_hex(args.key) if args.key else SecretKey.from_seed(spec.seed)
    epsilons = [float(e) for e in args.epsilons.split(",")]
    rows = run_attack_sweep(lm, spec, rule, epsilons, secret=secret)
    write_attack_csv(args.out, rows)
    _write_config_sidecar(
        args.out,
        {
            "rule": args.rule,
            "epsilons": args.epsilons,
            "vocab": args.vocab,
            "order": args.order,
            "alpha": args.alpha,
            "model_seed": args.model_seed,
            "prompts": spec.prompts,
            "responses": spec.responses_per_prompt,
            "length": spec.length,
            "seed": spec.seed,
        },
    )
    print(f"wrote {args.out}")
    return 0


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--vocab", type=int, default=100, help="toy model vocabulary size")
    p.add_argument("--order", type=int, default=2, help="toy model context length")
    p.add_argument("--alpha", type=float, default=1.0, help="toy model Dirichlet concentration")
    p.add_argument("--model-seed", dest="model_seed", type=int, default=0)
    p.add_argument("--prompts", type=int, default=None)
    p.add_argument("--responses", type=int, default=None)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--ngram", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--key", default=None, help="secret key as 256 hex chars")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wmkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"wmkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="watermarked generation from a toy model file")
    g.add_argument("--rule", default=None, help="gumbel | inverse | pr | beta:B | soft:delta=D,gamma=G")
    g.add_argument("--sampler", default=None, help="ngram:A | position | fixed:N0 (default ngram:5)")
    g.add_argument("--key", default=None, help="secret key as 256 hex chars")
    g.add_argument("--model", default=None, help="toy model JSON file")
    g.add_argument("--len", type=int, default=None, help="tokens to generate")
    g.add_argument("--seed", type=int, default=None, help="true-randomness sampling seed")
    g.add_argument("--prompt", default=None, help="comma-separated prompt token ids")
    g.add_argument("--out", default=None, help="token JSON output (default stdout)")
    g.add_argument("--trace", default=None, help="per-step trace JSON output")
    g.add_argument("--config", default=None, help="JSON config file (flags override)")
    g.set_defaults(func=_cmd_generate)

    d = sub.add_parser("detect", help="detect a watermark in a token file")
    d.add_argument("tokens", help="token JSON file ({'tokens': [...], 'vocab_size': N})")
    d.add_argument("--rule", default=None, help="beta (default) or soft")
    d.add_argument("--key", default=None, help="secret key as 256 hex chars")
    d.add_argument("--keys", default=None, help="file with one hex key per line (max statistic)")
    d.add_argument("--ngram", type=int, default=None)
    d.add_argument("--C", type=float, default=None, help="score scaling parameter")
    d.add_argument("--gamma", type=float, default=None, help="green fraction (soft rule)")
    d.add_argument("--fpr", type=float, default=None, help="threshold via the Hoeffding inverse")
    d.add_argument("--threshold", type=float, default=None, help="explicit z threshold")
    d.add_argument("--dedup", action="store_true", help="skip repeated context keys")
    d.add_argument("--from-trace", dest="from_trace", default=None, help="read key/ngram/C from a trace file")
    d.add_argument("--out", default=None)
    d.add_argument("--config", default=None)
    d.set_defaults(func=_cmd_detect)

    b = sub.add_parser("bias", help="expected total variation of a rule on a distribution")
    b.add_argument("--dist", default=None, help="JSON file {'probs': [...]}")
    b.add_argument("--rule", default=None)
    b.add_argument("--exact", action="store_true", help="exact permutation enumeration (N <= 9)")
    b.add_argument("--mc", default=None, help="Monte Carlo sample count, e.g. 1e6")
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--out", default=None)
    b.add_argument("--config", default=None)
    b.set_defaults(func=_cmd_bias)

    v = sub.add_parser("verify-theorems", help="randomized audit of the bias relationships")
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--nmax", type=int, default=7)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--betas", default="0,0.1,0.2,0.3,0.4,0.5")
    v.add_argument("--dirichlet", type=float, default=1.0, help="concentration of the random test distributions")
    v.set_defaults(func=_cmd_verify_theorems)

    e = sub.add_parser("experiment", help="delta table or detection table on the toy model")
    e.add_argument("--kind", choices=["delta", "detection"], required=True)
    e.add_argument("--rules", required=True, help="comma list, e.g. inverse,gumbel,beta:0,beta:0.3")
    e.add_argument("--fprs", default="0.1,0.05,0.01,0.001")
    e.add_argument("--calibrate", action="store_true", help="empirical null-quantile thresholds")
    e.add_argument("--out", required=True, help="CSV output path")
    _add_model_flags(e)
    e.set_defaults(func=_cmd_experiment)

    a = sub.add_parser("attack", help="paraphrase-attack AUC sweep")
    a.add_argument("--rule", required=True)
    a.add_argument("--epsilons", default="0,0.05,0.1,0.2,0.3")
    a.add_argument("--out", required=True, help="CSV output path")
    _add_model_flags(a)
    a.set_defaults(func=_cmd_attack)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WmkitError as exc:
        print(f"wmkit: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"wmkit: i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
