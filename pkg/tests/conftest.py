"""Shared fixtures and helpers for the test suite."""

import json
from pathlib import Path

import pytest

from bytetrace.smali import build_index, parse_smali_tree
from bytetrace.summarize import parse_response

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = FIXTURES / "corpus"
GROUNDTRUTH = FIXTURES / "groundtruth"

_index_cache = {}


def corpus_smali_dir(case_id):
    return CORPUS / case_id / "smali"


def load_corpus_index(case_id):
    """Parse-and-index a corpus case once per test session."""
    if case_id not in _index_cache:
        _index_cache[case_id] = build_index(parse_smali_tree([corpus_smali_dir(case_id)]))
    return _index_cache[case_id]


def load_manifest():
    return json.loads((CORPUS / "manifest.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def corpus_manifest():
    return load_manifest()


class ScriptedBackend:
    """A summarizer that replays canned raw responses.

    The script maps canonical method signatures to the raw text a model
    would have produced; each reply still goes through the real
    ``parse_response`` validation filter, which is exactly what the
    hallucination-filter tests need to exercise.
    """

    def __init__(self, script):
        self.script = dict(script)
        self.calls = []

    @property
    def identity(self):
        return "scripted"

    def summarize_request(self, req, index, drop_log=None):
        key = req.method.signature.render()
        self.calls.append(key)
        return parse_response(self.script[key], index, drop_log)
