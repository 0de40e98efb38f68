#!/usr/bin/env python3
"""Detection AUC of the beta watermark under random token-replacement attacks.

Sweeps attack strength for each beta and writes the long-format attack CSV;
AUC should fall as either the replacement fraction or beta grows.
"""

import argparse

from wmkit.harness import build_toylm, default_attack_spec, run_attack_sweep, write_attack_csv
from wmkit.keying import SecretKey
from wmkit.pda import parse_rule


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="attack_sweep.csv")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--vocab", type=int, default=100)
    ap.add_argument("--order", type=int, default=2)
    ap.add_argument("--alpha", type=float, default=0.1)
    ap.add_argument("--rules", default="beta:0,beta:0.05,beta:0.1,beta:0.2,beta:0.3")
    ap.add_argument("--epsilons", default="0,0.05,0.1,0.2,0.3")
    args = ap.parse_args()

    lm = build_toylm(args.vocab, args.order, args.alpha, args.seed)
    epsilons = [float(e) for e in args.epsilons.split(",")]
    all_rows = []
    for rule_text in args.rules.split(","):
        rule = parse_rule(rule_text)
        spec = default_attack_spec((rule,), seed=args.seed)
        rows = run_attack_sweep(lm, spec, rule, epsilons, secret=SecretKey.from_seed(args.seed))
        all_rows.extend(rows)
        print(rule_text, " ".join(f"eps={r.epsilon:g}:{r.auc:.4f}" for r in rows))
    write_attack_csv(args.out, all_rows)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
