"""Rank-test the bundled table of published UCR accuracies.

The table has one row per dataset and one column per model, with blanks
where a model was not reported. We restrict to the datasets that have a
prior state-of-the-art entry, add a best-of column over the four attention
variants, and compare it against LSTM-FCN and against the prior best.
"""
from pathlib import Path

from ran import stats

TABLE = Path(__file__).resolve().parents[1] / "tests" / "data" / "table1_accuracies.csv"
RAN_COLUMNS = [m for m in stats.read_results_csv(TABLE).models if m.startswith("ran-")]

table = stats.read_results_csv(TABLE).rows_where_present("existing-sota")
table = table.with_best_of("ran-best", RAN_COLUMNS)
print(f"{len(table.datasets)} datasets, models: {', '.join(table.models)}")

for baseline in ("lstm-fcn", "existing-sota"):
    res = stats.wilcoxon_signed_rank(table.column("ran-best"), table.column(baseline))
    s = stats.summarize(table, "ran-best", [baseline])
    print(
        f"ran-best vs {baseline:<13} W+={res.w_plus:7.1f} W-={res.w_minus:7.1f} "
        f"n={res.n_effective} p={res.p_value:.4f} ({res.method})  wins/ties/losses {s.sota_wins}/{s.sota_ties}/{s.losses}"
    )

# Full pairwise matrix, same layout as `ran compare`.
subset = stats.ResultsTable(
    table.datasets,
    ["lstm-fcn", "ran-best", "existing-sota"],
    [[row[table.models.index(m)] for m in ("lstm-fcn", "ran-best", "existing-sota")] for row in table.values],
)
print(stats.format_matrix_csv(subset.models, stats.pairwise_matrix(subset)))
