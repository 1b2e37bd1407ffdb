import numpy as np
import pytest

from statechef.manifest import (
    DatasetManifest,
    ManifestError,
    SampleRecord,
    class_stats,
    import_crawl_list,
    load_image,
    load_manifest,
    sample_imagenet_subset,
    save_manifest,
    stratified_split,
)
from statechef.synthetic import proportioned_manifest
from statechef.taxonomy import CLASS_NAMES


def make_records(state, n, prefix="r", object_name="carrot"):
    return [
        SampleRecord(id=f"{prefix}{state}{i}", uri=f"mem://{prefix}{i}", object=object_name, state=state)
        for i in range(n)
    ]


class TestRecords:
    def test_unknown_state(self):
        with pytest.raises(ManifestError, match="state"):
            SampleRecord(id="a", uri="u", object="carrot", state="zzz")

    def test_unknown_split(self):
        with pytest.raises(ManifestError, match="split"):
            SampleRecord(id="a", uri="u", object="carrot", state="whole", split="half")

    def test_unknown_flag(self):
        with pytest.raises(ManifestError, match="flags"):
            SampleRecord(id="a", uri="u", object="carrot", state="whole", flags=frozenset({"odd"}))

    def test_duplicate_ids(self):
        records = make_records("whole", 2)
        with pytest.raises(ManifestError, match="duplicate"):
            DatasetManifest(records=(records[0], records[0]))

    def test_admissibility(self, taxonomy):
        ok = DatasetManifest(records=tuple(make_records("juice", 1, object_name="milk")))
        ok.validate_against(taxonomy)
        bad = DatasetManifest(records=tuple(make_records("sliced", 1, object_name="milk")))
        with pytest.raises(ManifestError, match="admissible"):
            bad.validate_against(taxonomy)
        # "other" is always allowed
        DatasetManifest(records=tuple(make_records("other", 1, object_name="milk"))).validate_against(taxonomy)

    def test_roundtrip(self, tmp_path):
        manifest = DatasetManifest(records=tuple(make_records("diced", 3)))
        path = save_manifest(manifest, tmp_path / "m.jsonl")
        again = load_manifest(path)
        assert again.records == manifest.records


class TestStratifiedSplit:
    def test_ten_records_largest_remainder(self):
        manifest = DatasetManifest(records=tuple(make_records("diced", 10)))
        split = stratified_split(manifest, (0.7, 0.15, 0.15), seed=5)
        sizes = split.split_sizes()
        assert (sizes["train"], sizes["test"], sizes["val"]) == (7, 2, 1)

    def test_empty_manifest(self):
        split = stratified_split(DatasetManifest(), (0.7, 0.15, 0.15), seed=0)
        assert len(split) == 0

    def test_bad_ratios(self):
        manifest = DatasetManifest(records=tuple(make_records("diced", 4)))
        with pytest.raises(ManifestError, match="sum to 1"):
            stratified_split(manifest, (0.5, 0.2, 0.2), seed=0)
        with pytest.raises(ManifestError, match="non-negative"):
            stratified_split(manifest, (1.2, -0.1, -0.1), seed=0)

    def test_reassignment_guard(self):
        manifest = stratified_split(DatasetManifest(records=tuple(make_records("diced", 6))), seed=0)
        with pytest.raises(ManifestError, match="allow_reassign"):
            stratified_split(manifest, seed=1)
        stratified_split(manifest, seed=1, allow_reassign=True)

    def test_partition_and_per_class_deviation(self, rng):
        records = []
        counts = {}
        for i, state in enumerate(CLASS_NAMES):
            n = int(rng.integers(0, 40))
            counts[state] = n
            records.extend(make_records(state, n, prefix=f"c{i}-"))
        manifest = DatasetManifest(records=tuple(records))
        ratios = (0.7, 0.15, 0.15)
        split = stratified_split(manifest, ratios, seed=3)
        assert split.split_sizes()["unassigned"] == 0
        for state, n in counts.items():
            per_split = {s: 0 for s in ("train", "test", "val")}
            for record in split.records:
                if record.state == state:
                    per_split[record.split] += 1
            assert sum(per_split.values()) == n
            for ratio, name in zip(ratios, ("train", "test", "val")):
                assert abs(per_split[name] - ratio * n) < 1.0 + 1e-9

    def test_deterministic_and_order_invariant(self):
        manifest = proportioned_manifest(total=600, seed=2)
        a = stratified_split(manifest, seed=9)
        b = stratified_split(manifest, seed=9)
        assert a.records == b.records
        shuffled = DatasetManifest(
            records=tuple(reversed(manifest.records)),
            taxonomy_version=manifest.taxonomy_version,
        )
        c = stratified_split(shuffled, seed=9)
        assert {r.id: r.split for r in c.records} == {r.id: r.split for r in a.records}
        d = stratified_split(manifest, seed=10)
        assert {r.id: r.split for r in d.records} != {r.id: r.split for r in a.records}


class TestClassStats:
    def test_all_diced(self):
        manifest = DatasetManifest(records=tuple(make_records("diced", 3)))
        counts = class_stats(manifest)
        assert counts["diced"] == 3
        assert sum(counts.values()) == 3
        assert list(counts) == list(CLASS_NAMES)

    def test_totals_and_tall_classes(self):
        manifest = proportioned_manifest()
        counts = class_stats(manifest)
        assert sum(counts.values()) == 9309
        assert counts["whole"] > 1000 and counts["sliced"] > 1000
        for name in CLASS_NAMES:
            if name not in ("whole", "sliced"):
                assert 700 <= counts[name] <= 1000


class TestCrawlImport:
    def test_three_lines(self, tmp_path):
        path = tmp_path / "list.txt"
        path.write_text("http://x.test/1.jpg\nhttp://x.test/2.jpg\nhttp://x.test/3.jpg\n")
        result = import_crawl_list(path, "tomato", "sliced")
        assert len(result.records) == 3
        assert not result.errors
        for record in result.records:
            assert (record.object, record.state) == ("tomato", "sliced")
            assert record.split == "unassigned"
            assert record.source == "web-crawl"

    def test_empty_file(self, tmp_path):
        path = tmp_path / "list.txt"
        path.write_text("")
        assert import_crawl_list(path, "tomato", "sliced").records == ()

    def test_malformed_line_reported(self, tmp_path):
        path = tmp_path / "list.txt"
        path.write_text("http://x.test/1.jpg\nhttp://x.test/2.jpg\nnot a uri\nhttp://x.test/4.jpg\n")
        result = import_crawl_list(path, "tomato", "sliced")
        assert len(result.records) == 3
        assert len(result.errors) == 1
        assert result.errors[0][0] == 3  # line number

    def test_unknown_state(self, tmp_path):
        path = tmp_path / "list.txt"
        path.write_text("http://x.test/1.jpg\n")
        with pytest.raises(ManifestError, match="keyword state"):
            import_crawl_list(path, "tomato", "julienned")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestError, match="cannot read"):
            import_crawl_list(tmp_path / "absent.txt", "tomato", "sliced")


class TestImagenetSampling:
    def make_pool(self, categories, per_category):
        records = []
        for cat in categories:
            for i in range(per_category):
                records.append(
                    SampleRecord(
                        id=f"{cat}-{i}", uri="mem://x", object=cat, state="whole", source="imagenet"
                    )
                )
        return DatasetManifest(records=tuple(records))

    def test_sixteen_times_fifty(self):
        categories = [f"cat{i}" for i in range(16)]
        pool = self.make_pool(categories, 60)
        subset = sample_imagenet_subset(categories, 50, pool, seed=4)
        assert len(subset) == 800
        per_cat = {c: 0 for c in categories}
        for record in subset.records:
            per_cat[record.object] += 1
        assert all(v == 50 for v in per_cat.values())

    def test_zero_per_category(self):
        pool = self.make_pool(["a", "b"], 3)
        assert len(sample_imagenet_subset(["a", "b"], 0, pool, seed=0)) == 0

    def test_deterministic(self):
        pool = self.make_pool(["a", "b"], 30)
        one = sample_imagenet_subset(["a", "b"], 10, pool, seed=6)
        two = sample_imagenet_subset(["a", "b"], 10, pool, seed=6)
        assert one.records == two.records

    def test_insufficient_pool_names_category(self):
        records = self.make_pool(["a"], 8).records + self.make_pool(["b"], 5).records
        pool = DatasetManifest(records=records)
        with pytest.raises(ManifestError, match="'b'"):
            sample_imagenet_subset(["a", "b"], 6, pool, seed=0)


class TestImageLoading:
    def test_npy(self, tmp_path):
        image = np.arange(4 * 5 * 3, dtype=np.uint8).reshape(4, 5, 3)
        path = tmp_path / "img.npy"
        np.save(path, image)
        assert np.array_equal(load_image(str(path)), image)

    def test_png(self, tmp_path):
        from PIL import Image

        image = np.zeros((6, 6, 3), dtype=np.uint8)
        image[:3] = 200
        path = tmp_path / "img.png"
        Image.fromarray(image).save(path)
        assert np.array_equal(load_image(str(path)), image)

    def test_bad_shape(self, tmp_path):
        path = tmp_path / "img.npy"
        np.save(path, np.zeros((4, 5), dtype=np.uint8))
        with pytest.raises(ManifestError, match="HxWx3"):
            load_image(str(path))

    def test_remote_rejected(self):
        with pytest.raises(ManifestError, match="remote"):
            load_image("http://x.test/1.jpg")
