"""Compare all estimators as assignment bias grows.

Runs the sweep machinery in-process over gamma in {0, 4} for the linear
regression, the marginal structural model, and the balanced model with and
without its adversarial objective.  With no confounding (gamma = 0) the
simple supervised models do fine; as gamma grows, methods that ignore the
assignment bias degrade faster.

A paper-scale run would use the CLI instead, e.g.:

    cfseq sweep --gammas 0 4 8 --models linear msm crn_lambda0 crn \
        --seeds 0 1 2 --tau 1 --out sweep/
"""

from cfseq.evaluation import evaluate_branch_sets
from cfseq.features import FeatureScaler
from cfseq.models import LinearBaseline, MsmModel
from cfseq.models.crn import CrnConfig
from cfseq.simulator import SimConfig, branch_sets_for_dataset, simulate_dataset
from cfseq.training import TrainConfig, train_crn

N, T = 300, 40
results = {}
for gamma in (0.0, 4.0):
    sim = SimConfig(gamma_c=gamma, gamma_r=gamma, n_patients=N,
                    max_timesteps=T, seed=3)
    train_set = simulate_dataset(sim)
    test_set = simulate_dataset(
        SimConfig.from_dict({**sim.to_dict(), "n_patients": 60}),
        first_patient_id=N)
    bss = branch_sets_for_dataset(test_set, 1, sim)
    scaler = FeatureScaler.fit(train_set)
    tc = TrainConfig(epochs=20, decoder_epochs=12, tau_max=3, seed=4)
    models = {
        "linear": LinearBaseline.fit(train_set, [1], scaler),
        "msm": MsmModel.fit(train_set, [1], scaler),
        "crn_lambda0": train_crn(
            train_set, CrnConfig(),
            TrainConfig.from_dict({**tc.to_dict(), "lambda_max": 0.0}),
            scaler),
        "crn": train_crn(train_set, CrnConfig(), tc, scaler),
    }
    for name, model in models.items():
        results[(gamma, name)] = evaluate_branch_sets(model, test_set,
                                                      bss)["rmse"]

print(f"{'model':<12}" + "".join(f"gamma={g:<6g}" for g in (0.0, 4.0)))
for name in ("linear", "msm", "crn_lambda0", "crn"):
    row = "".join(f"{results[(g, name)]:<12.3f}" for g in (0.0, 4.0))
    print(f"{name:<12}{row}   (one-step RMSE, % of max volume)")
