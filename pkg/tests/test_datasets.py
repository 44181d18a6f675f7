"""Benchmark ingestion: adapters, strict schema checks, label derivation."""
from __future__ import annotations

import json
import random

import pytest

from stepverify.core import Source, StepSolution, write_jsonl
from stepverify.datasets import (
    BenchmarkName,
    BenchmarkSet,
    Difficulty,
    SchemaError,
    build_mathcheck_star,
    default_adapter,
    difficulty_of,
    load_adapter,
    load_canonical,
    load_processbench,
    load_prm800k,
    map_prm800k,
)

from conftest import make_problem


def write_lines(path, records) -> None:
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")


def pb_record(id: str, source: str, label: int, n_steps: int = 4) -> dict:
    return {
        "id": id,
        "source": source,
        "problem": f"problem {id}",
        "steps": [f"s{i}" for i in range(n_steps)],
        "label": label,
    }


def test_load_processbench_preserves_order_and_counts(tmp_path) -> None:
    records = [
        pb_record("g-1", "gsm8k", -1),
        pb_record("g-2", "gsm8k", 2),
        pb_record("m-1", "math", 0),
        pb_record("o-1", "olympiadbench", 1),
        pb_record("g-3", "gsm8k", -1),
        pb_record("n-1", "omnimath", -1),
    ]
    path = tmp_path / "bench.jsonl"
    write_lines(path, records)
    bench = load_processbench(path)
    assert bench.name is BenchmarkName.PROCESSBENCH
    assert len(bench) == 6
    assert [p.id for p in bench.problems] == ["g-1", "g-2", "m-1", "o-1", "g-3", "n-1"]
    assert bench.per_source() == {
        Source.GSM8K: 3,
        Source.MATH: 1,
        Source.OLYMPIADBENCH: 1,
        Source.OMNIMATH: 1,
    }
    assert bench.problems[1].label == 2
    assert bench.problems[1].steps == ("s0", "s1", "s2", "s3")


def test_blank_lines_are_skipped(tmp_path) -> None:
    path = tmp_path / "gaps.jsonl"
    first = json.dumps(pb_record("a", "gsm8k", -1))
    second = json.dumps(pb_record("b", "gsm8k", -1))
    path.write_text(f"\n{first}\n\n{second}\n", encoding="utf-8")
    assert len(load_processbench(path)) == 2


def test_invalid_json_names_the_line(tmp_path) -> None:
    path = tmp_path / "bad.jsonl"
    path.write_text(
        json.dumps(pb_record("ok", "gsm8k", -1)) + "\n{not json\n", encoding="utf-8"
    )
    with pytest.raises(SchemaError, match=r"bad\.jsonl:2.*invalid JSON"):
        load_processbench(path)


def test_non_object_record_is_rejected(tmp_path) -> None:
    path = tmp_path / "arr.jsonl"
    path.write_text("[1, 2, 3]\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="not a JSON object"):
        load_processbench(path)


def test_steps_must_be_a_list_of_strings(tmp_path) -> None:
    bad = pb_record("x", "gsm8k", -1)
    bad["steps"] = "one big string"
    path = tmp_path / "steps.jsonl"
    write_lines(path, [bad])
    with pytest.raises(SchemaError, match="steps must be a list of strings"):
        load_processbench(path)
    bad["steps"] = ["fine", 7]
    write_lines(path, [bad])
    with pytest.raises(SchemaError, match="steps must be a list of strings"):
        load_processbench(path)


def test_label_must_be_a_real_integer(tmp_path) -> None:
    bad = pb_record("x", "gsm8k", -1)
    bad["label"] = True
    path = tmp_path / "label.jsonl"
    write_lines(path, [bad])
    with pytest.raises(SchemaError, match="label must be an integer"):
        load_processbench(path)
    bad["label"] = "2"
    write_lines(path, [bad])
    with pytest.raises(SchemaError, match="label must be an integer"):
        load_processbench(path)


def test_out_of_range_label_is_a_schema_error_with_context(tmp_path) -> None:
    path = tmp_path / "range.jsonl"
    write_lines(path, [pb_record("x", "gsm8k", 9, n_steps=3)])
    with pytest.raises(SchemaError, match=r"range\.jsonl:1"):
        load_processbench(path)


def test_unknown_source_is_rejected(tmp_path) -> None:
    path = tmp_path / "src.jsonl"
    write_lines(path, [pb_record("x", "algebra_zoo", -1)])
    with pytest.raises(SchemaError, match="unknown source"):
        load_processbench(path)


def test_missing_field_names_the_raw_field(tmp_path) -> None:
    record = pb_record("x", "gsm8k", -1)
    del record["problem"]
    path = tmp_path / "missing.jsonl"
    write_lines(path, [record])
    with pytest.raises(SchemaError, match="missing field 'problem'"):
        load_processbench(path)


def test_custom_adapter_renames_nests_and_pins_constants(tmp_path) -> None:
    adapter_path = tmp_path / "custom.map"
    adapter_path.write_text(
        "# custom shape\n"
        "id = meta.uid\n"
        "source = const:gsm8k\n"
        "problem = question\n"
        "steps = trace\n"
        "label = first_error\n",
        encoding="utf-8",
    )
    data_path = tmp_path / "custom.jsonl"
    write_lines(
        data_path,
        [
            {
                "meta": {"uid": "x-1"},
                "question": "How many?",
                "trace": ["count", "add"],
                "first_error": 1,
            }
        ],
    )
    bench = load_processbench(data_path, adapter=load_adapter(adapter_path))
    assert bench.problems[0].id == "x-1"
    assert bench.problems[0].source is Source.GSM8K
    assert bench.problems[0].label == 1


def test_malformed_adapter_line_is_rejected(tmp_path) -> None:
    adapter_path = tmp_path / "broken.map"
    adapter_path.write_text("id = id\nsource const:gsm8k\n", encoding="utf-8")
    with pytest.raises(SchemaError, match=r"broken\.map:2"):
        load_adapter(adapter_path)


def test_default_adapters_ship_with_the_package() -> None:
    assert default_adapter("processbench")["id"] == "id"
    assert default_adapter("mathcheck")["source"] == "const:mathcheck"
    assert default_adapter("prm800k")["ratings"] == "ratings"


def mc_record(id: str, label: int) -> dict:
    return {
        "id": id,
        "problem": f"problem {id}",
        "steps": ["s0", "s1", "s2"],
        "label": label,
    }


def test_build_mathcheck_star_combines_both_components(tmp_path) -> None:
    mc_path = tmp_path / "mc.jsonl"
    write_lines(mc_path, [mc_record("mc-1", 0), mc_record("mc-2", 2), mc_record("mc-3", 1)])
    pb_path = tmp_path / "pb.jsonl"
    write_lines(
        pb_path,
        [
            pb_record("g-1", "gsm8k", -1),
            pb_record("g-2", "gsm8k", 2),
            pb_record("m-1", "math", -1),
            pb_record("g-3", "gsm8k", -1),
        ],
    )
    bench = build_mathcheck_star(mc_path, pb_path)
    assert bench.name is BenchmarkName.MATHCHECK_STAR
    assert [p.id for p in bench.problems] == ["mc-1", "mc-2", "mc-3", "g-1", "g-3"]
    assert bench.per_source() == {Source.MATHCHECK: 3, Source.GSM8K: 2}
    assert all(p.label >= 0 for p in bench.problems[:3])
    assert all(p.label == -1 for p in bench.problems[3:])


def test_mathcheck_component_must_be_error_labeled(tmp_path) -> None:
    mc_path = tmp_path / "mc.jsonl"
    write_lines(mc_path, [mc_record("mc-1", 0), mc_record("mc-2", -1)])
    pb_path = tmp_path / "pb.jsonl"
    write_lines(pb_path, [pb_record("g-1", "gsm8k", -1)])
    with pytest.raises(SchemaError, match=r"mc\.jsonl:2.*error-labeled"):
        build_mathcheck_star(mc_path, pb_path)


def test_duplicate_ids_across_components_are_rejected(tmp_path) -> None:
    mc_path = tmp_path / "mc.jsonl"
    write_lines(mc_path, [mc_record("shared", 0)])
    pb_path = tmp_path / "pb.jsonl"
    write_lines(pb_path, [pb_record("shared", "gsm8k", -1)])
    with pytest.raises(SchemaError, match="duplicate problem id 'shared'"):
        build_mathcheck_star(mc_path, pb_path)


def oracle_first_bad(ratings) -> int:
    bad = [i for i, r in enumerate(ratings) if r == -1]
    return bad[0] if bad else -1


def test_map_prm800k_examples() -> None:
    assert map_prm800k([]) == -1
    assert map_prm800k([1, 0, 1]) == -1
    assert map_prm800k([1, -1, 0]) == 1
    assert map_prm800k([-1]) == 0
    assert map_prm800k([0, 0, -1]) == 2
    assert map_prm800k([-1, -1, -1]) == 0
    with pytest.raises(SchemaError, match="must be in"):
        map_prm800k([1, 2, 0])


def test_map_prm800k_matches_oracle_on_random_sequences() -> None:
    rng = random.Random(7)
    for _ in range(300):
        ratings = [rng.choice([-1, 0, 1]) for _ in range(rng.randint(0, 8))]
        assert map_prm800k(ratings) == oracle_first_bad(ratings)


def prm_record(id: str, ratings: list[int]) -> dict:
    return {
        "id": id,
        "problem": f"problem {id}",
        "steps": [f"s{i}" for i in range(len(ratings))] or ["s0"],
        "ratings": ratings or [0],
    }


def test_load_prm800k_samples_deterministically_and_writes_manifest(tmp_path) -> None:
    records = [prm_record(f"p-{i:02d}", [1, 0, -1] if i % 3 == 0 else [1, 0, 1]) for i in range(12)]
    path = tmp_path / "prm.jsonl"
    write_lines(path, records)
    bench = load_prm800k(path, sample_size=5, seed=3)
    assert bench.name is BenchmarkName.PRM800K
    assert len(bench) == 5
    assert all(p.source is Source.PRM800K for p in bench.problems)
    manifest = json.loads((tmp_path / "prm.jsonl.sample.json").read_text())
    assert manifest["ids"] == [p.id for p in bench.problems]
    assert manifest["population"] == 12
    assert manifest["sample_size"] == 5
    again = load_prm800k(path, sample_size=5, seed=3)
    assert [p.id for p in again.problems] == [p.id for p in bench.problems]
    for problem in bench.problems:
        index = int(problem.id.split("-")[1])
        assert problem.label == (2 if index % 3 == 0 else -1)


def test_load_prm800k_sample_larger_than_population_takes_all(tmp_path) -> None:
    path = tmp_path / "small.jsonl"
    write_lines(path, [prm_record(f"p-{i}", [1, 1]) for i in range(4)])
    manifest_path = tmp_path / "elsewhere.json"
    bench = load_prm800k(path, sample_size=50, seed=0, manifest_path=manifest_path)
    assert [p.id for p in bench.problems] == ["p-0", "p-1", "p-2", "p-3"]
    assert json.loads(manifest_path.read_text())["sample_size"] == 4


def test_load_prm800k_validates_ratings(tmp_path) -> None:
    path = tmp_path / "bad.jsonl"
    record = prm_record("p-0", [1, 0])
    record["ratings"] = [1, 0, 0]
    write_lines(path, [record])
    with pytest.raises(SchemaError, match="3 ratings for 2 steps"):
        load_prm800k(path)
    record = prm_record("p-0", [1, 5])
    write_lines(path, [record])
    with pytest.raises(SchemaError, match=r"bad\.jsonl:1.*must be in"):
        load_prm800k(path)
    record = prm_record("p-0", [1, 0])
    record["ratings"] = "good"
    write_lines(path, [record])
    with pytest.raises(SchemaError, match="ratings must be a list"):
        load_prm800k(path)


def test_difficulty_buckets() -> None:
    assert difficulty_of(Source.GSM8K) is Difficulty.EASY
    assert difficulty_of(Source.MATH) is Difficulty.EASY
    assert difficulty_of(Source.OLYMPIADBENCH) is Difficulty.HARD
    assert difficulty_of(Source.OMNIMATH) is Difficulty.HARD
    with pytest.raises(ValueError, match="prm800k"):
        difficulty_of(Source.PRM800K)


def test_limited_takes_a_prefix() -> None:
    problems = tuple(make_problem(id=f"p-{i}") for i in range(5))
    bench = BenchmarkSet(BenchmarkName.SYNTHETIC, problems)
    assert bench.limited(None) is bench
    assert bench.limited(9) is bench
    assert [p.id for p in bench.limited(2).problems] == ["p-0", "p-1"]
    with pytest.raises(ValueError):
        bench.limited(-1)


def test_write_jsonl_load_canonical_round_trip(tmp_path) -> None:
    problems = [
        make_problem(id="c-1", source=Source.GSM8K, label=-1),
        make_problem(id="c-2", source=Source.OLYMPIADBENCH, label=3),
        make_problem(id="c-3", source=Source.PRM800K, label=0),
    ]
    path = tmp_path / "canonical.jsonl"
    write_jsonl(str(path), problems)
    loaded = load_canonical(path, BenchmarkName.SYNTHETIC)
    assert loaded.name is BenchmarkName.SYNTHETIC
    assert loaded.problems == tuple(problems)
