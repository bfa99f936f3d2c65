import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mosaicgen.catalog import (
    Category,
    DuplicateId,
    EmptyStrategyPool,
    ParseError,
    build_prompt,
    convert_lvis_categories,
    load_catalog,
    sample_categories,
    save_catalog,
)

EASEL = Category(id=1, name="easel", definition="an upright tripod for displaying something",
                 bucket="rare")


def make_catalog(lines):
    return io.StringIO("\n".join(lines) + "\n")


class TestLoadCatalog:
    def test_single_entry(self):
        cats = load_catalog(make_catalog(
            ["1\teasel\trare\tan upright tripod for displaying something"]))
        assert cats == [EASEL]

    def test_empty_file_rejected(self):
        with pytest.raises(ParseError):
            load_catalog(io.StringIO(""))

    def test_comment_only_file_rejected(self):
        with pytest.raises(ParseError):
            load_catalog(make_catalog(["# id\tname\tbucket\tdefinition"]))

    def test_duplicate_id(self):
        with pytest.raises(DuplicateId):
            load_catalog(make_catalog(["7\ta\trare\t", "7\tb\tcommon\t"]))

    def test_parse_error_carries_line(self):
        with pytest.raises(ParseError) as exc:
            load_catalog(make_catalog(["1\teasel\trare\t", "2\tbad-line"]))
        assert exc.value.line_no == 2

    def test_bad_bucket(self):
        with pytest.raises(ParseError):
            load_catalog(make_catalog(["1\teasel\tmythic\t"]))

    def test_bytes_stream_and_comments(self):
        data = b"# comment\n1\teasel\trare\t\n\n2\tparrot\tcommon\ta bird\n"
        cats = load_catalog(io.BytesIO(data))
        assert [c.name for c in cats] == ["easel", "parrot"]

    def test_save_round_trip(self):
        cats = [EASEL, Category(id=2, name="parrot", definition="", bucket="common")]
        buf = io.StringIO()
        save_catalog(cats, buf)
        buf.seek(0)
        assert load_catalog(buf) == cats


def test_convert_lvis_categories():
    doc = {"categories": [
        {"id": 1, "name": "easel", "def": "an upright tripod", "frequency": "r"},
        {"id": 2, "name": "parrot", "def": "a bird", "frequency": "c"},
        {"id": 3, "name": "dog", "def": "", "frequency": "f"},
        {"id": 4, "name": "thing"},
    ]}
    cats = convert_lvis_categories(io.StringIO(json.dumps(doc)))
    assert [c.bucket for c in cats] == ["rare", "common", "frequent", "unknown"]
    assert cats[0].definition == "an upright tripod"


class TestSampleCategories:
    def small_catalog(self):
        rare = [Category(id=i, name=f"r{i}", bucket="rare") for i in range(3)]
        common = [Category(id=10 + i, name=f"c{i}", bucket="common") for i in range(5)]
        return rare + common

    def test_rare_only_with_forced_replacement(self):
        cats = sample_categories(self.small_catalog(), 4, "rare_only",
                                 np.random.default_rng(0))
        assert len(cats) == 4
        assert all(c.bucket == "rare" for c in cats)
        assert len({c.id for c in cats}) == 3  # pool of 3 forces one repeat

    def test_without_replacement_when_pool_allows(self):
        for seed in range(20):
            cats = sample_categories(self.small_catalog(), 4, "all_buckets",
                                     np.random.default_rng(seed))
            assert len({c.id for c in cats}) == 4

    def test_seeded_fixture(self):
        catalog = [Category(id=i, name=f"cat{i}", bucket="common") for i in range(1203)]
        ids = [c.id for c in sample_categories(catalog, 4, "all_buckets",
                                               np.random.default_rng(7))]
        # pinned from the first run of the seeded sampler
        assert ids == [1133, 750, 1079, 822]

    def test_empty_pool(self):
        with pytest.raises(EmptyStrategyPool):
            sample_categories([], 1, "all_buckets", np.random.default_rng(0))
        with pytest.raises(EmptyStrategyPool):
            common_only = [Category(id=1, name="a", bucket="common")]
            sample_categories(common_only, 1, "rare_only", np.random.default_rng(0))


class TestBuildPrompt:
    def test_photo_single(self):
        p = build_prompt(EASEL, "photo_single")
        assert p.text == "a photo of a single easel"
        assert p.subject == "easel"

    def test_photo_single_def(self):
        p = build_prompt(EASEL, "photo_single_def")
        assert p.text == "a photo of a single easel, an upright tripod for displaying something"
        assert p.subject == "easel"
        assert p.template_id == "photo_single_def"

    def test_name_only(self):
        p = build_prompt(EASEL, "name_only")
        assert p.text == "easel"
        assert (p.subject_start, p.subject_end) == (0, 5)

    def test_missing_definition_falls_back(self):
        bare = Category(id=9, name="parrot", definition="", bucket="common")
        p = build_prompt(bare, "photo_single_def")
        assert p.text == "a photo of a single parrot"
        assert p.template_id == "photo_single"


names = st.text(
    st.characters(whitelist_categories=("Ll", "Lu"), whitelist_characters=" -"),
    min_size=1, max_size=30,
).filter(lambda s: s.strip() == s and s)
definitions = st.text(
    st.characters(whitelist_categories=("Ll",), whitelist_characters=" ,"),
    max_size=60,
)


@given(name=names, definition=definitions,
       template=st.sampled_from(["name_only", "photo_single", "photo_single_def"]))
def test_span_fidelity(name, definition, template):
    cat = Category(id=1, name=name, definition=definition, bucket="common")
    p = build_prompt(cat, template)
    assert p.subject == name


@given(name=names, definition=definitions.filter(lambda d: d))
def test_template_monotonicity(name, definition):
    cat = Category(id=1, name=name, definition=definition, bucket="common")
    short = build_prompt(cat, "name_only").text
    mid = build_prompt(cat, "photo_single").text
    long = build_prompt(cat, "photo_single_def").text
    assert short in mid
    assert long.startswith(mid)
