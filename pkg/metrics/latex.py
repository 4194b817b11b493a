import pandas as pd

from metrics.types import RHO_GRID, STATUS_OK

TABLE_TEMPLATE = """
\\begin{{table}}[htbp]
	\\centering
	\\caption{{Response time (s) for K = {k}, $\\rho$ = {rho}}}
		\\begin{{tabular}}{{ {columns} }}

        {content}

        \\end{{tabular}}
	\\label{{tab:responseTime_k{k}_rho{rho_label}}}
\\end{{table}}
"""

MISSING_CELL = "-"


def _seconds(value: float) -> str:
    return f"{value:.4f}"


def response_time_table_to_latex(sweep_table: pd.DataFrame, k: int, rho: float) -> str:
    """
    One row per beta, one column per gamma, holding the best response time
    over the policies. The fastest cell of the table is bold.
    """
    mask = sweep_table["status"] == STATUS_OK
    mask &= sweep_table["rho_source"] == RHO_GRID
    mask &= sweep_table["k"] == k
    mask &= sweep_table["rho"] == rho
    table_slice = sweep_table[mask]

    if len(table_slice) == 0:
        raise Exception(f"no measured cells for k={k}, rho={rho}")

    pivot = table_slice.pivot_table(index="beta", columns="gamma", values="wall_seconds", aggfunc="min")
    fastest = pivot.min().min()

    def cell(value: float) -> str:
        if pd.isna(value):
            return MISSING_CELL
        if value == fastest:
            return f"\\textbf{{{_seconds(value)}}}"
        return _seconds(value)

    header = "\\hline\n$\\beta$ / $\\gamma$ & " + " & ".join(str(g) for g in pivot.columns) + " \\\\\n\\hline"
    lines = [
        f"{beta} & " + " & ".join(cell(v) for v in row.tolist()) + " \\\\"
        for beta, row in pivot.iterrows()
    ]
    footer = "\\hline"

    content = header + "\n" + "\n".join(lines) + "\n" + footer

    return TABLE_TEMPLATE.format(
        k=k,
        rho=rho,
        rho_label=str(rho).replace(".", "_"),
        columns=" ".join(["l"] + ["r"] * len(pivot.columns)),
        content=content,
    )
