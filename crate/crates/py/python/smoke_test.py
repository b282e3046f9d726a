"""Quick check of the Python bindings. Run after `maturin develop` or
installing the wheel:

    python crates/py/python/smoke_test.py
"""

import shutil
import tempfile
from pathlib import Path

import rapidner


def main():
    text = rapidner.clean_text("I love <b>masala chai</b>!!! 😋 https://x.example")
    assert text == "I love masala chai!", text

    assert rapidner.split_sentences("Mr. Sharma sells chai. It is hot.") == [
        "Mr. Sharma sells chai.",
        "It is hot.",
    ]
    assert rapidner.tokenize("chai, please")[0] == ("chai", 0, 4)

    drink = rapidner.Dictionary("DRINK", ["chai", "masala chai", "tea"])
    food = rapidner.Dictionary("FOOD", ["tea", "squash"])
    assert len(drink) == 3 and "Masala  Chai" in drink
    assert len(food.subtract(drink)) == 1

    m = rapidner.Matcher([drink, food], priority=["DRINK", "FOOD"])
    rec = m.annotate("Masala chai is not checkmate tea.", sent_id="d#0")
    spans = [(s["start"], s["end"], s["type"]) for s in rec["spans"]]
    assert spans == [(0, 11, "DRINK"), (29, 32, "DRINK")], spans
    assert rec["conflicts"][0]["candidate_types"] == ["DRINK", "FOOD"]

    bio = rapidner.spans_to_bio(rec)
    assert bio[:3] == [("Masala", "B-DRINK"), ("chai", "I-DRINK"), ("is", "O")]
    back = rapidner.bio_to_spans(rec["text"], [t for _, t in bio])
    assert [(s["start"], s["end"]) for s in back] == [(0, 11), (29, 32)]

    assert abs(rapidner.cohen_kappa(list("xxxxxooooo"), list("xxxxoxoooo")) - 0.6) < 1e-12
    assert rapidner.fleiss_kappa([[1, 1], [1, 1]], 2) == -1.0
    prf = rapidner.span_prf([rec], [rec])
    assert prf["micro"]["f1"] == 1.0

    parts = rapidner.split([f"s{i}" for i in range(1, 11)], seed=42)
    assert sorted(len(v) for v in parts.values()) == [0, 1, 9]

    with tempfile.TemporaryDirectory() as tmp:
        store = rapidner.ReviewStore.init(Path(tmp) / "j", [rec], ["DRINK", "FOOD"])
        r = store.decide("d#0", "ann", "delete_span", span=(29, 32, "DRINK"), revision=0)
        assert r["status"] == "CORRECTED" and len(r["current_spans"]) == 1
        try:
            store.decide("d#0", "ann", "accept", revision=0)
        except rapidner.RapidnerError:
            pass
        else:
            raise AssertionError("stale revision accepted")
        assert rapidner.ReviewStore.open(Path(tmp) / "j").get("d#0") == r

        fixture = Path(__file__).resolve().parents[3] / "fixtures" / "mini"
        if fixture.exists():
            project = Path(tmp) / "mini"
            shutil.copytree(fixture, project, ignore=shutil.ignore_patterns("out"))
            stages = rapidner.run_pipeline(project / "project.toml")
            assert all(s["ran"] for s in stages)
            meta = rapidner.finalize(project / "project.toml", auto_accept=True)
            assert meta["total"] == 24, meta

    print("python smoke test ok")


if __name__ == "__main__":
    main()
