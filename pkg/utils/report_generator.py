from datetime import date
from typing import Optional

from jinja2 import Template

from models.schemas import NormalsPlan, Plan, Verdict

CERTIFICATION_TEMPLATE = """
# Certification Run {{ report.config_hash }}
Prepared on {{ date }}

## Verdict: {{ "PASS" if verdict.passed else "FAIL" }}

- Root MSE: {{ "%.6g"|format(verdict.root_mse) }} (standard error {{ "%.3g"|format(verdict.root_std_error) }})
- Certified interval: [{{ "%.6g"|format(verdict.lower) }}, {{ "%.6g"|format(verdict.upper) }}] at {{ verdict.sigma }} sigma

## Run

- Sample size n = {{ report.n }}, burn-in n0 = {{ report.n0 }}
- Replications: {{ report.replications }}
- Seed: {{ report.seed }}
{% if report.true_value is not none %}- Reference value S(f) = {{ "%.10g"|format(report.true_value) }}
{% endif %}- Mean estimate: {{ "%.10g"|format(report.mean_estimate) }}
- Empirical MSE: {{ "%.6g"|format(report.empirical_mse) }} +/- {{ "%.3g"|format(report.mse_std_error) }}

## Oracle Calls

- Integrand: {{ report.oracle_calls.f }}
{% if report.oracle_calls.rho %}- Density: {{ report.oracle_calls.rho }} (plus {{ report.oracle_calls.rho_init }} at the start)
{% endif %}{% if report.oracle_calls.membership %}- Membership: {{ report.oracle_calls.membership }}
{% endif %}"""

PLAN_TEMPLATE = """
# {{ plan.label }} Plan
Prepared on {{ date }}

- Spectral gap lower bound: {{ "%.6g"|format(plan.gap_lower) }}
{% if plan.delta is not none %}- Step radius delta: {{ "%.6g"|format(plan.delta) }}
{% endif %}- Burn-in n0: {{ plan.n0 }}
{% if plan.n is not none %}- Sample size n: {{ plan.n }}
- Total steps N: {{ plan.N }}
{% endif %}{% if plan.error_bound is not none %}- Error bound: {{ "%.6g"|format(plan.error_bound) }}
{% endif %}{% if plan.error_lower is not none %}- Error lower bound: {{ "%.6g"|format(plan.error_lower) }}
{% endif %}{% if plan.oracle_budget is not none %}- Oracle budget: {{ "%.6g"|format(plan.oracle_budget) }}
{% endif %}{% if plan.complexity is not none %}- Complexity bound: {{ "%.6g"|format(plan.complexity) }}
{% endif %}
{% if normals %}
## Contracting Normals

- theta = {{ plan.theta }}
- c* = {{ "%.6f"|format(plan.c_star) }}
- beta_hat = {{ "%.6f"|format(plan.beta_hat) }}
- Initial density norm: {{ "%.6g"|format(plan.density_norm) }}
{% endif %}{% if plan.extras %}
## Extras
{% for key, value in plan.extras.items() %}- {{ key }}: {{ "%.6g"|format(value) }}
{% endfor %}{% endif %}"""


def generate_certification_report(verdict: Verdict, report_date: Optional[date] = None) -> str:
    template = Template(CERTIFICATION_TEMPLATE)
    return template.render(verdict=verdict, report=verdict.report, date=report_date or date.today())


def generate_plan_report(plan: Plan, report_date: Optional[date] = None) -> str:
    template = Template(PLAN_TEMPLATE)
    return template.render(plan=plan, normals=isinstance(plan, NormalsPlan), date=report_date or date.today())
