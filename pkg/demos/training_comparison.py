"""Train the toy transformer with and without conditioned tokens.

Two identical runs (same seed, same data, same optimizer) except that the
second adds a frozen 10 * I_k to the embedded tokens right after the
positional encoding.  Per epoch we probe the condition number of the
embedded tokens, of the first layer's attention outputs (mean over
heads), and the all-layer mean, on a fixed held-out sample.

Takes ~20 s.  Run:  python3 demos/training_comparison.py
"""

from condtokens import compare_runs, default_comparison_configs


def main():
    base, cond = default_comparison_configs(seed=0, lam=10.0, epochs=100)
    print("Model: seq_len=16 token_dim=8 embed_dim=32 heads=4 layers=2, "
          "AdamW, 100 epochs, batch 8, teacher-regression task.\n")
    summary, base_result, cond_result = compare_runs(base, cond)

    print("Per-epoch token kappa (every 20th epoch):")
    print(f"{'epoch':>6} {'baseline':>12} {'conditioned':>12}")
    for b, c in zip(base_result.logs[::20], cond_result.logs[::20]):
        print(f"{b.epoch:>6} {b.kappa_tokens:12.1f} {c.kappa_tokens:12.2f}")

    print("\nEpoch-averaged condition numbers:")
    rows = [
        ("tokens", summary.base_kappa_tokens, summary.cond_kappa_tokens,
         summary.ratio_kappa_tokens),
        ("attention, layer 1", summary.base_kappa_attn_layer1,
         summary.cond_kappa_attn_layer1, summary.ratio_kappa_attn_layer1),
        ("attention, all layers", summary.base_kappa_attn_alllayers,
         summary.cond_kappa_attn_alllayers, summary.ratio_kappa_attn_alllayers),
    ]
    print(f"{'quantity':<24} {'baseline':>10} {'conditioned':>12} {'ratio':>8}")
    for name, b, c, r in rows:
        print(f"{name:<24} {b:10.1f} {c:12.2f} {r:8.4f}")

    print(f"\nFinal losses: baseline {summary.base_final_loss:.5f}, "
          f"conditioned {summary.cond_final_loss:.5f}")
    print("(At this scale both runs fit the task; the conditioning gap is the "
          "point, the loss gap is not.)")


if __name__ == "__main__":
    main()
