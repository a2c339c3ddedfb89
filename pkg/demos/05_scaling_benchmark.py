"""Wall-clock scaling: the scan is linear in sequence length, attention is not.

Times the input-dependent scan against a naive softmax-attention reference
over a sweep of sequence lengths and fits log-log runtime exponents.  The
scan should fit well below 1.2; the attention reference should fit near 2.
"""

from spineseg.bench import fit_exponent, format_records, run_scan_bench

records = run_scan_bench(lmin=256, lmax=8192,
                         variants=("selective", "attention"), repeats=3)
print(format_records(records))
for variant in ("selective", "attention"):
    print(f"{variant:10s} fitted runtime exponent: "
          f"{fit_exponent(records, variant):.3f}")
