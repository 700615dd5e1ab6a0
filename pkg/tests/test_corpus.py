from __future__ import annotations

import pytest

from m3kg.corpus import load_manifest, load_queryset
from m3kg.errors import ManifestError


def _write(tmp_path, lines):
    path = tmp_path / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_manifest_round_trip(tmp_path):
    path = _write(
        tmp_path,
        [
            '{"id": 1, "caption": "a dog barks", "audio_ref": "a1.wav", "visual_ref": null, "title": "Dog clip", "description": null}',
            '{"id": 2, "caption": "rain falls", "audio_ref": null, "visual_ref": "v2.mp4"}',
        ],
    )
    samples = load_manifest(path)
    assert [s.id for s in samples] == [1, 2]
    assert samples[0].title == "Dog clip"
    assert samples[1].visual_ref == "v2.mp4"
    assert samples[1].metadata_description is None


def test_manifest_rejects_media_less_sample(tmp_path):
    path = _write(
        tmp_path,
        [
            '{"id": 1, "caption": "ok", "audio_ref": "a.wav"}',
            '{"id": 2, "caption": "no media", "audio_ref": null, "visual_ref": null}',
        ],
    )
    with pytest.raises(ManifestError) as err:
        load_manifest(path)
    assert "line 2" in str(err.value)


@pytest.mark.parametrize(
    "line",
    [
        '{"id": "x", "caption": "c", "audio_ref": "a"}',
        '{"id": 1, "caption": "", "audio_ref": "a"}',
        '{"id": 1, "audio_ref": "a"}',
        '{"id": 1, "caption": "c", "audio_ref": 5}',
        "not json",
        "[1, 2]",
    ],
)
def test_manifest_rejects_bad_lines(tmp_path, line):
    with pytest.raises(ManifestError):
        load_manifest(_write(tmp_path, [line]))


def test_manifest_rejects_duplicate_ids(tmp_path):
    path = _write(
        tmp_path,
        ['{"id": 1, "caption": "a", "audio_ref": "x"}'] * 2,
    )
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_queryset_round_trip(tmp_path):
    path = _write(
        tmp_path,
        ['{"id": 3, "question": "what?", "audio_ref": "a.wav", "reference": "a dog"}'],
    )
    queries = load_queryset(path)
    assert queries[0].question == "what?"
    assert queries[0].reference == "a dog"
    assert queries[0].visual_ref is None


def test_queryset_requires_media(tmp_path):
    path = _write(tmp_path, ['{"id": 3, "question": "what?"}'])
    with pytest.raises(ManifestError):
        load_queryset(path)
