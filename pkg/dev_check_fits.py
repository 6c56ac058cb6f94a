"""Dev scratch: compare fits against the published per-study tables."""
import sys
sys.path.insert(0, "src")
import numpy as np
from mtdmeta.study_data import load_example, summarize
from mtdmeta.dose_response import (
    FitConfig, FitMethod, DoseTransform, fit_logistic, mtd_from_fit,
)

A1 = {  # study: (plain est, se), (firth est, se), (flac est, se)
    "awada": ((6.22, 0.15), (6.19, 0.17), (6.22, 0.17)),
    "clark": ((6.33, 0.15), (6.24, 0.22), (6.29, 0.22)),
    "moore": ((6.47, 0.46), (6.50, 0.67), (6.62, 0.69)),
    "strumberg": ((8.01, 3.16), (8.53, 5.35), (8.31, 3.88)),
    "furuse": ((6.06, 20.33), (7.00, 2.10), (6.98, 1.61)),
    "minami": ((8.01, 3.89), (8.27, 5.25), (8.91, 6.43)),
    "miller": ((6.28, 1.49), (6.19, 1.30), (6.32, 1.60)),
    "crump_a": ((7.21, 3.14), (8.59, 10.96), (8.09, 5.77)),
    "crump_b": ((6.57, 0.80), (6.56, 1.08), (6.78, 1.18)),
    "borthakur_a": ((6.40, 2.15), (6.44, 0.15), (6.49, 0.17)),
    "borthakur_b": ((6.37, 0.25), (6.38, 0.43), (6.48, 0.45)),
    "nabors": ((6.57, 0.17), (6.52, 0.21), (6.57, 0.21)),
    "chen": ((6.07, 30.28), (3.10, 13.91), (8.06, 6.85)),
}
A2 = {
    "yamada": ((5.02, 2.63), (5.28, 0.81), (5.32, 0.62)),
    "takiuchi": ((4.59, 0.38), (4.56, 0.48), (4.65, 0.51)),
    "inokuchi": ((4.47, 0.07), (4.47, 0.07), (4.48, 0.08)),
    "nakafusa": ((4.20, 0.07), (4.20, 0.08), (4.21, 0.08)),
    "ishimoto": ((4.38, 1.26), (4.33, 0.09), (4.37, 0.10)),
    "ogata": ((4.08, 5.51), (3.98, 0.07), (4.00, 0.07)),
    "shiozawa": ((4.67, 0.16), (4.64, 0.18), (4.66, 0.18)),
    "yoshioka": ((7.93, 41.94), (-48.06, 14805.91), (10.50, 103.10)),
    "komatsu": ((4.07, 1.56), (3.86, 3.02), (3.81, 2.58)),
    "kusaba": ((4.59, 5.01), (4.52, 0.07), (4.54, 0.07)),
    "yoda": ((4.37, 3.30), (4.28, 0.12), (4.31, 0.10)),
    "goya": ((4.49, 1.65), (4.44, 0.05), (4.45, 0.05)),
}

for name, table in [("sorafenib", A1), ("irinotecan", A2)]:
    print(f"==== {name} ====")
    datasets = load_example(name)
    for ds in datasets:
        pub = table[ds.study_id]
        row = [f"{ds.study_id:12s} {summarize(ds)}"]
        for i, method in enumerate([FitMethod.PLAIN_ML, FitMethod.FIRTH, FitMethod.FLAC]):
            cfg = FitConfig(method=method, dose_transform=DoseTransform.LOG)
            fit = fit_logistic(ds, cfg)
            import warnings as _w
            with _w.catch_warnings():
                _w.simplefilter("ignore")
                est = mtd_from_fit(fit, cfg, ds.study_id)
            flag = "" if fit.converged else ("D" if fit.separation_detected else "!")
            pe, ps = pub[i]
            d_est = est.estimate - pe
            rel_se = (est.std_err / ps - 1) if ps else float("nan")
            row.append(
                f"{method.value:5s} {est.estimate:9.3f} {est.std_err:10.3f}{flag:1s}"
                f" (pub {pe:7.2f} {ps:8.2f}; d={d_est:+6.3f} rse={rel_se:+7.1%})"
            )
        print("\n    ".join(row))
