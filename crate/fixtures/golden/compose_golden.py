"""Composes report.json for the golden run by hand, without the engine.

Findings are the union of both agents' scripted items: the metrics agent's
four items, then the tracing agent's items minus the PR item whose parameter
map duplicates F2. The interpretation is the F2I script, with tags read off
the tag lexicon by hand. Demo order follows the relaxation order for the
query key (male, elderly, II): D-001 exact, D-003 age-relaxed, D-002
gender-relaxed. The guideline version is SHA-256 over the key-sorted compact
JSON of [exhaustive, rules] with thresholds as floats.
"""
import hashlib
import json
import pathlib

here = pathlib.Path(__file__).parent
root = here.parent.parent

rules = json.loads((root / "crates/core/data/guidelines.json").read_text())


def floats(rule):
    p = dict(rule["predicate"])
    for k in ("threshold", "low", "high"):
        if k in p:
            p[k] = float(p[k])
    return {**rule, "predicate": p}


canon = json.dumps(
    [rules.get("exhaustive", False), [floats(r) for r in rules["rules"]]],
    sort_keys=True, separators=(",", ":"), ensure_ascii=False,
)
guideline_version = hashlib.sha256(canon.encode()).hexdigest()
image_hash = "sha256:" + hashlib.sha256((here / "strip1.png").read_bytes()).hexdigest()


def num(v, unit):
    return {"value": float(v), "unit": unit}


def finding(i, text, modality, params):
    return {"id": f"F{i}", "statement": text, "source_modality": modality,
            "parameters": params, "agent_iteration": 0}


def interp(i, text, tags, supports):
    return {"id": f"I{i}", "statement": text, "diagnosis_tags": sorted(tags),
            "supports": supports, "agent_iteration": 0}


def demos(role):
    return [f"D-001:{role}", f"D-003:{role}", f"D-002:{role}"]


report = {
    "schema_version": 1,
    "patient": {"patient_id": "G-001", "gender": "male", "age_years": 72, "monitoring_hours": 24.0},
    "metrics": [
        {"attribute": "Average Heart Rate", "value": 68.0, "unit": "bpm"},
        {"attribute": "PR Interval", "value": 212.0, "unit": "ms"},
        {"attribute": "AF Burden", "value": 0.0, "unit": "%"},
        {"attribute": "Longest Pause", "value": 1.8, "unit": "s"},
        {"attribute": "Predominant Rhythm", "value": "Sinus Rhythm", "unit": ""},
    ],
    "tracings": [{
        "image_ref": "strip1.png",
        "image_hash": image_hash,
        "caption": "Sinus rhythm with a 1.8 s pause",
        "duration_seconds": 10.0,
        "arrhythmia_tag": "Pause (<3s)",
    }],
    "findings": [
        finding(1, "Average heart rate: 68 bpm", "metrics", {"HR_AVG_BPM": num(68, "bpm")}),
        finding(2, "PR interval of 212 ms", "metrics", {"PR_INTERVAL_MS": num(212, "ms")}),
        finding(3, "AF burden: 0%", "metrics", {"AF_BURDEN_PCT": num(0, "%")}),
        finding(4, "Longest pause: 1.8 s", "metrics", {"PAUSE_MAX_S": num(1.8, "s")}),
        finding(5, "Sinus rhythm with a single 1.8 s pause", "tracing", {}),
    ],
    "interpretation": [
        interp(1, "Sinus rhythm with first-degree AV block", {"SINUS_RHYTHM", "FIRST_DEGREE_AV_BLOCK"}, ["F2", "F5"]),
        interp(2, "No atrial fibrillation", set(), ["F3"]),
        interp(3, "Short pause, not clinically significant", set(), ["F4", "F5"]),
    ],
    "violations": [],
    "meta": {
        "engine_version": "0.1.0",
        "model_names": {"M2F": "scripted-metrics", "T2F": "scripted-tracings", "F2I": "scripted-interpretation"},
        "guideline_set_version": guideline_version,
        "demo_ids": {"M2F": demos("M2F"), "T2F": demos("T2F"), "F2I": demos("F2I")},
        "factcheck_iterations": 0,
        "state": {"name": "Complete"},
        "degraded": False,
        "created_at": "2026-03-01T08:00:00.000Z",
    },
    "review": {"status": "preliminary", "edits": [], "reviewer_id": None, "reviewed_at": None},
}

(here / "report.json").write_text(json.dumps(report, indent=2, ensure_ascii=False) + "\n")
