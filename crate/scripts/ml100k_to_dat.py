"""Convert the MovieLens-100K parquet copy shipped in the pytorch-widedeep wheel
into MovieLens-1M style "::"-separated .dat files (latin-1).

Usage: python3 scripts/ml100k_to_dat.py <pytorch_widedeep wheel> <out dir>

Ages are mapped onto the ML-1M age buckets and occupations onto integer codes
(sorted occupation names), so the ML-1M parser reads the output unchanged.
"""
import io
import os
import sys
import zipfile

import pandas as pd

AGE_BUCKETS = [(18, 1), (25, 18), (35, 25), (45, 35), (50, 45), (56, 50)]


def age_code(age: int) -> int:
    for upper, code in AGE_BUCKETS:
        if age < upper:
            return code
    return 56


def main(wheel: str, out: str) -> None:
    z = zipfile.ZipFile(wheel)
    base = "pytorch_widedeep/datasets/data/MovieLens100k_{}.parquet.brotli"
    data = pd.read_parquet(io.BytesIO(z.read(base.format("data"))))
    users = pd.read_parquet(io.BytesIO(z.read(base.format("users"))))
    items = pd.read_parquet(io.BytesIO(z.read(base.format("items"))))
    os.makedirs(out, exist_ok=True)

    data = data.sort_values(["user_id", "timestamp", "movie_id"])
    with open(os.path.join(out, "ratings.dat"), "w", encoding="latin-1", newline="\n") as f:
        for r in data.itertuples(index=False):
            f.write(f"{r.user_id}::{r.movie_id}::{r.rating}::{r.timestamp}\n")

    occupations = {name: i for i, name in enumerate(sorted(users["occupation"].unique()))}
    with open(os.path.join(out, "users.dat"), "w", encoding="latin-1", newline="\n") as f:
        for r in users.sort_values("user_id").itertuples(index=False):
            f.write(f"{r.user_id}::{r.gender}::{age_code(int(r.age))}::{occupations[r.occupation]}::{r.zip_code}\n")

    genre_cols = list(items.columns[5:])
    with open(os.path.join(out, "movies.dat"), "w", encoding="latin-1", newline="\n") as f:
        for r in items.sort_values("movie_id").itertuples(index=False):
            row = r._asdict()
            genres = [g for i, g in enumerate(genre_cols) if r[5 + i] == 1]
            title = str(row["movie_title"]).replace("::", ":")
            f.write(f"{row['movie_id']}::{title}::{'|'.join(genres)}\n")

    with open(os.path.join(out, "occupations.txt"), "w") as f:
        for name, code in occupations.items():
            f.write(f"{code}\t{name}\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
