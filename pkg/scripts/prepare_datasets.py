"""Convert the raw public COMPAS and German Credit files into numeric CSVs.

Usage:
    python scripts/prepare_datasets.py --compas compas-scores-two-years.csv \
        --german german.data --out data/

COMPAS follows the ProPublica two-year filter (screening within 30 days of
arrest, known recidivism status, no ordinary traffic offences, a valid score),
which leaves 6172 defendants. German Credit is the 1000-row UCI file with
categorical attributes mapped to ordinal codes.
"""

import argparse
import csv
import os
from datetime import datetime

COMPAS_COLUMNS = [
    "age",
    "two_year_recid",
    "priors_count",
    "length_of_stay",
    "c_charge_degree_F",
    "sex_Male",
    "race_African_American",
    "high_risk",
]

# UCI attribute order; categorical attributes are coded by their suffix.
GERMAN_ATTRIBUTES = [
    "checking_status",
    "duration_months",
    "credit_history",
    "purpose",
    "credit_amount",
    "savings",
    "employment_since",
    "loan_rate_pct_income",
    "status_sex",
    "other_debtors",
    "residence_since",
    "property",
    "age",
    "other_installment_plans",
    "housing",
    "existing_credits",
    "job",
    "people_liable",
    "telephone",
    "foreign_worker",
    "credit_risk",
]
GERMAN_MALE_CODES = {"A91", "A93", "A94"}


def _parse_time(value):
    return datetime.strptime(value, "%Y-%m-%d %H:%M:%S")


def prepare_compas(src, dst):
    kept = 0
    with open(src, newline="", encoding="utf-8") as fin, open(dst, "w", newline="") as fout:
        writer = csv.writer(fout)
        writer.writerow(COMPAS_COLUMNS)
        for row in csv.DictReader(fin):
            if row["days_b_screening_arrest"] == "":
                continue
            days = int(float(row["days_b_screening_arrest"]))
            if not -30 <= days <= 30:
                continue
            if row["is_recid"] == "-1" or row["c_charge_degree"] == "O":
                continue
            if row["score_text"] in ("", "N/A"):
                continue
            stay = _parse_time(row["c_jail_out"]) - _parse_time(row["c_jail_in"])
            writer.writerow([
                row["age"],
                row["two_year_recid"],
                row["priors_count"],
                f"{stay.total_seconds() / 86400.0:.6f}",
                int(row["c_charge_degree"] == "F"),
                int(row["sex"] == "Male"),
                int(row["race"] == "African-American"),
                int(row["score_text"] == "High"),
            ])
            kept += 1
    return kept


def _code(value, attribute_number):
    # "A143" for attribute 14 -> 3; "A410" for attribute 4 -> 10
    prefix = f"A{attribute_number}"
    if not value.startswith(prefix):
        raise ValueError(f"unexpected code {value!r} for attribute {attribute_number}")
    return int(value[len(prefix):])


def prepare_german(src, dst):
    columns = [a for a in GERMAN_ATTRIBUTES if a not in ("status_sex", "credit_risk")]
    kept = 0
    with open(src, encoding="utf-8") as fin, open(dst, "w", newline="") as fout:
        writer = csv.writer(fout)
        writer.writerow(columns + ["gender_male", "good_customer"])
        for line in fin:
            parts = line.split()
            if not parts:
                continue
            record = dict(zip(GERMAN_ATTRIBUTES, parts))
            out = []
            for name in columns:
                value = record[name]
                number = GERMAN_ATTRIBUTES.index(name) + 1
                out.append(_code(value, number) if value.startswith("A") else value)
            out.append(int(record["status_sex"] in GERMAN_MALE_CODES))
            out.append(int(record["credit_risk"] == "1"))
            writer.writerow(out)
            kept += 1
    return kept


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--compas", help="raw compas-scores-two-years.csv")
    parser.add_argument("--german", help="raw UCI german.data")
    parser.add_argument("--out", default="data")
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    if args.compas:
        n = prepare_compas(args.compas, os.path.join(args.out, "compas.csv"))
        print(f"compas: {n} rows")
    if args.german:
        n = prepare_german(args.german, os.path.join(args.out, "german.csv"))
        print(f"german: {n} rows")


if __name__ == "__main__":
    main()
