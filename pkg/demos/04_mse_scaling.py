"""MSE of the one-round protocol against n, via the simulation harness."""
from pairwise_ldp.harness import ExperimentConfig, mse_report, run_trials

config = ExperimentConfig(statistic="gini_diversity", k=16, n=[500, 2000, 8000], epsilon=[1.0],
                          protocol="noninteractive", trials=100, master_seed=4)
result = run_trials(config)
text, slopes = mse_report(result.summaries)
print(text)
for key, slope in slopes.items():
    print("log-log slope", key, f"{slope:.2f}")  # close to -1
