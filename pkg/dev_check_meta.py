"""Dev scratch: pipeline vs published meta-analysis results."""
import sys, math
sys.path.insert(0, "src")
import numpy as np
from mtdmeta.study_data import load_example
from mtdmeta.dose_response import FitConfig, FitMethod, DoseTransform, estimate_mtds
from mtdmeta.meta_analysis import (
    MetaInput, PriorSpec, HalfNormalPrior, UNIFORM_PRIORS,
    posterior, combined_estimate, prediction, shrinkage, study_weights,
    tau_summary, sensitivity_filter, bridge, meta_analyze,
)

cfg = FitConfig(method=FitMethod.FLAC, dose_transform=DoseTransform.LOG, target_toxicity=0.33)

def show(tag, summ, exp_scale=True):
    if exp_scale:
        print(f"{tag}: median {math.exp(summ.median):8.1f} central [{math.exp(summ.lower):8.1f}, {math.exp(summ.upper):8.1f}] "
              f"shortest [{math.exp(summ.shortest_lower):8.1f}, {math.exp(summ.shortest_upper):8.1f}]")
    else:
        print(f"{tag}: median {summ.median:6.3f} mean {summ.mean:6.3f} sd {summ.sd:6.3f} "
              f"central [{summ.lower:6.3f}, {summ.upper:6.3f}] shortest [{summ.shortest_lower:6.3f}, {summ.shortest_upper:6.3f}]")

print("=== sorafenib (pub: mu 608.1 [470.5, 795.6]; pred [363.3, 1044.8]; chen shr 607.0 [364.6, 1046.8]; tau 0.13 [0.00, 0.45]) ===")
datasets = load_example("sorafenib")
fits, ests = estimate_mtds(datasets, cfg)
inp = MetaInput.from_estimates(ests)
post = posterior(inp, UNIFORM_PRIORS)
print("tau grid max:", post.grid[-1])
show("mu  ", combined_estimate(post))
show("pred", prediction(post))
chen = inp.study_ids.index("chen")
show("chen", shrinkage(post, inp, chen))
show("tau ", tau_summary(post), exp_scale=False)
w = study_weights(post, inp)
print("weights sum:", w.sum(), {i: round(float(x), 3) for i, x in zip(inp.study_ids, w)})

filt = sensitivity_filter(inp, 1.0)
print("retained after s<=1 filter:", filt.k, filt.study_ids)
post_f = posterior(filt, UNIFORM_PRIORS)
show("mu filtered", combined_estimate(post_f))

print()
print("=== irinotecan (pub: mu 80.3 [67.4, 97.3]; pred [47.6, 138.1]; goya shr 85.6 [77.9, 94.0]) ===")
datasets2 = load_example("irinotecan")
fits2, ests2 = estimate_mtds(datasets2, cfg)
inp2 = MetaInput.from_estimates(ests2)
post2 = posterior(inp2, UNIFORM_PRIORS)
print("tau grid max:", post2.grid[-1])
show("mu  ", combined_estimate(post2))
show("pred", prediction(post2))
goya = inp2.study_ids.index("goya")
show("goya", shrinkage(post2, inp2, goya))
show("tau ", tau_summary(post2), exp_scale=False)
print("goya own:", math.exp(ests2[goya].estimate - 1.96*ests2[goya].std_err), math.exp(ests2[goya].estimate + 1.96*ests2[goya].std_err))

print()
print("=== bridging (pub: west (6.41, 0.14), jap (7.09, 1.57); jap shr (6.43, 0.30) -> 618 [337, 1179]; weight 3.6%; jap-only 1199 [56, 25574]) ===")
west = MetaInput.from_estimates([e for e, d in zip(ests, datasets) if d.group_tag == "western"])
jap = MetaInput.from_estimates([e for e, d in zip(ests, datasets) if d.group_tag == "japanese"])
hn02 = PriorSpec(tau=HalfNormalPrior(0.2))
res = bridge(
    [("western", west), ("japanese", jap)],
    {"western": UNIFORM_PRIORS, "japanese": hn02},
    hn02,
    "japanese",
)
for label, summ, pe in zip(res.labels, res.stage1_mu, res.pseudo_estimates):
    print(f"stage1 {label}: mean {pe.estimate:.3f} sd {pe.std_err:.3f}")
    show(f"  {label} exp", summ)
show("jap shrink (log)", res.target_summary, exp_scale=False)
show("jap shrink", res.target_summary)
print("stage2 weights:", dict(zip(res.labels, np.round(res.stage2.weights, 4))))
