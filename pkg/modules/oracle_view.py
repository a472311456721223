from typing import List

import pandas as pd

from modules.oracle_model import CheckResult

"""
ORACLE VIEW MODULE
------------------
Responsibility: Formats verification results as a structured text report
(one row per check with PASS/FAIL and the computed values).
"""


def results_frame(results: List[CheckResult]) -> pd.DataFrame:
    return pd.DataFrame({
        "check": [r.name for r in results],
        "status": ["PASS" if r.passed else "FAIL" for r in results],
        "detail": [r.detail for r in results],
    })


def render_report(results: List[CheckResult], title: str = "Theory oracle") -> str:
    df = results_frame(results)
    try:
        table = df.to_markdown(index=False)
    except ImportError:
        table = df.to_string(index=False)

    failed = sum(not r.passed for r in results)
    verdict = "ALL CHECKS PASSED" if failed == 0 else f"{failed} CHECK(S) FAILED"
    return f"## {title}\n\n{table}\n\n{verdict} ({len(results)} checks)"
