#!/usr/bin/env python3
"""Smoke test for the reasondrive_py extension module.

Builds nothing itself: run `cargo build -p reasondrive-py` first, then
`python3 python/smoke_test.py`. The script locates the compiled cdylib in
target/, stages it under an importable name, and exercises the bound API
against the bundled mini fixture.
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
FIXTURE = REPO / "crates" / "core" / "tests" / "fixtures" / "mini"


def stage_module(tmp: Path) -> None:
    """Copy the built cdylib into tmp as an importable module."""
    candidates = [
        REPO / "target" / profile / name
        for profile in ("debug", "release")
        for name in ("libreasondrive_py.so", "libreasondrive_py.dylib", "reasondrive_py.dll")
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit(
            "reasondrive_py cdylib not found under target/; "
            "run `cargo build -p reasondrive-py` first"
        )
    suffix = ".pyd" if built.suffix == ".dll" else ".so"
    shutil.copy2(built, tmp / f"reasondrive_py{suffix}")
    sys.path.insert(0, str(tmp))


def main() -> None:
    with tempfile.TemporaryDirectory() as tmpdir:
        tmp = Path(tmpdir)
        stage_module(tmp)
        import reasondrive_py as rd

        # Camera order and tokenization.
        views = rd.canonical_views()
        assert views[0] == "CAM_FRONT" and views[3] == "CAM_BACK", views
        assert len(views) == 6
        assert rd.normalize("The red car <c1> stops.") == ["the", "red", "car", "<c1>", "stops"]
        assert rd.split_sentences("First step. Second step?") == ["First step.", "Second step?"]
        assert rd.sentence_budget("planning") == (2, 3)

        # Structured-output codec round trip.
        wire = rd.emit_structured("Yes, <c2> is braking.", think="The car ahead slows.")
        parsed = rd.parse_structured(wire)
        assert parsed["think"] == "The car ahead slows."
        assert parsed["answer"] == "Yes, <c2> is braking."
        assert parsed["parse_mode"] == "strict"
        assert [t["id"] for t in parsed["tags_in_answer"]] == ["c2"]
        tags = rd.extract_tags("see <c3,CAM_BACK,812.0,455.5> and <c3> again")
        assert len(tags) == 1 and tags[0]["id"] == "c3"

        # Dataset loading.
        ds = rd.load_dataset(str(FIXTURE))
        assert repr(ds).startswith("Dataset(")
        assert len(ds) == ds.qa_count == 12
        manifest = ds.manifest()
        assert manifest["qa_count"] == 12
        records = ds.records()
        assert {r["category"] for r in records} == {
            "perception", "prediction", "planning", "behavior",
        }
        assert "Dataset report" in ds.report()
        split = ds.split(train_fraction=0.75, seed=3)
        assert not set(split["train_frames"]) & set(split["eval_frames"])
        assert len(split["train"]) + len(split["eval"]) == 12

        # Direct metric scoring: identity pairs max out the overlap metrics.
        pairs = [
            {"candidate": r["gt_answer"], "references": [r["gt_answer"]],
             "category": r["category"], "id": r["qa_id"]}
            for r in records
        ]
        scores = rd.score_pairs(pairs)
        assert scores["accuracy"] == 1.0 and scores["match"] == 1.0
        assert all(abs(b - 1.0) < 1e-9 for b in scores["bleu"])
        assert abs(scores["rouge_l"] - 1.0) < 1e-9
        assert scores["judge"] is None
        assert 0.0 <= scores["final"] <= 1.0

        # End-to-end evaluation from a predictions file (judge off).
        preds = tmp / "predictions.jsonl"
        preds.write_text(
            "\n".join(
                json.dumps({"id": r["qa_id"], "output": f"<answer>{r['gt_answer']}</answer>"})
                for r in records
            )
            + "\n"
        )
        report = rd.evaluate_predictions(str(FIXTURE), str(preds))
        assert report["pair_count"] == 12
        assert report["judge_enabled"] is False
        assert report["overall"]["accuracy"] == 1.0
        assert set(report["per_category"]) == {
            "perception", "prediction", "planning", "behavior",
        }

        # Errors surface as ValueError with the library's error code.
        try:
            rd.emit_structured("")
        except ValueError as e:
            assert "EMPTY_ANSWER" in str(e), e
        else:
            sys.exit("emit_structured('') should have raised")

        print(f"smoke test passed: reasondrive_py {rd.__version__}")


if __name__ == "__main__":
    main()
