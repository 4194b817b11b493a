import pandas as pd

from metrics.latex import response_time_table_to_latex
from metrics.types import RHO_GRID, RHO_MODEL, STATUS_OK


def _measured(sweep_table: pd.DataFrame) -> pd.DataFrame:
    return sweep_table[sweep_table["status"] == STATUS_OK].copy()


def best_parameters_per_k(sweep_table: pd.DataFrame) -> pd.DataFrame:
    """Fastest (beta, gamma, rho, policy) setup for each K."""
    analysis = _measured(sweep_table)

    best_rows = []
    for k in sorted(analysis["k"].unique()):
        analysis_slice = analysis[analysis["k"] == k]
        analysis_slice = analysis_slice.sort_values(by=["wall_seconds", "beta", "gamma"], kind="stable")

        best = analysis_slice.iloc[0]
        best_rows.append(
            {
                "k": int(k),
                "beta": best["beta"],
                "gamma": best["gamma"],
                "rho": best["rho"],
                "policy": best["policy"],
                "wall_seconds": best["wall_seconds"],
                "eps": best["eps"],
            }
        )

    return pd.DataFrame(best_rows)


def rho_model_by_k(sweep_table: pd.DataFrame) -> pd.DataFrame:
    analysis = _measured(sweep_table)
    analysis = analysis[analysis["rho_source"] == RHO_GRID].dropna(subset=["rho_model"])

    grouped = analysis.groupby("k")["rho_model"]
    return pd.DataFrame(
        {
            "rho_model_mean": grouped.mean(),
            "rho_model_min": grouped.min(),
            "rho_model_max": grouped.max(),
        }
    ).reset_index()


def refinement_summary(sweep_table: pd.DataFrame, base_rho: float = 0.5) -> pd.DataFrame:
    """
    Pairs every rho_model rerun with the base rho cell it was derived from,
    comparing response time and realized busy-time imbalance.
    """
    analysis = _measured(sweep_table)
    keys = ["k", "beta", "gamma", "policy"]

    base = analysis[(analysis["rho_source"] == RHO_GRID) & (analysis["rho"] == base_rho)]
    refined = analysis[analysis["rho_source"] == RHO_MODEL]

    merged = base[keys + ["wall_seconds", "imbalance"]].merge(
        refined[keys + ["rho", "wall_seconds", "imbalance"]],
        on=keys,
        suffixes=("_base", "_model"),
    )
    merged = merged.rename(columns={"rho": "rho_model"})
    merged["speedup"] = merged["wall_seconds_base"] / merged["wall_seconds_model"]
    merged["imbalance_improved"] = merged["imbalance_model"] <= merged["imbalance_base"]

    return merged.sort_values(by=keys).reset_index(drop=True)


def analyse_sweep(sweep_table: pd.DataFrame, output_file_name: str) -> None:
    """
    Writes the best setups, the rho_model curve and the refinement table as
    CSV, plus one LaTeX response-time table per K and rho.
    `output_file_name` is formatted with `name`.
    """
    best_parameters_per_k(sweep_table).to_csv(output_file_name.format(name="best_per_k"), index=False)
    rho_model_by_k(sweep_table).to_csv(output_file_name.format(name="rho_model_by_k"), index=False)
    refinement_summary(sweep_table).to_csv(output_file_name.format(name="refinement"), index=False)

    measured = _measured(sweep_table)
    measured = measured[measured["rho_source"] == RHO_GRID]
    for (k, rho), _ in measured.groupby(["k", "rho"]):
        latex = response_time_table_to_latex(sweep_table, int(k), float(rho))
        path = output_file_name.format(name=f"response_time_k={int(k)}_rho={rho}")
        with open(path.replace(".csv", ".tex"), "w", encoding="utf8") as f:
            f.write(latex)
