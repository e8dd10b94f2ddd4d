import pytest
from loguru import logger
from pydantic import ValidationError

from app.data.manifest import load_manifest, write_manifest
from app.models.manifest import ManifestEntry
from app.utils.error import ManifestError

HEADER = "path,label,pai_type,dataset_id,subject_id\n"


@pytest.fixture
def dataset_dir(tmp_path):
    (tmp_path / "img").mkdir()
    for name in ("a.png", "b.png", "c.png"):
        (tmp_path / "img" / name).touch()
    return tmp_path


def write(directory, body, header=HEADER):
    path = directory / "manifest.csv"
    path.write_text(header + body)
    return path


class TestManifestEntry:
    def test_attack_needs_pai(self):
        """Attack entries need a PAI type."""
        with pytest.raises(ValidationError):
            ManifestEntry(path="a.png", label="attack", dataset_id="CLK")

    def test_bonafide_rejects_pai(self):
        """Bonafide entries may not carry a PAI type."""
        with pytest.raises(ValidationError):
            ManifestEntry(path="a.png", label="bonafide", pai_type="PH", dataset_id="CLK")

    def test_tag_characters(self):
        """Tags with spaces are refused."""
        with pytest.raises(ValidationError):
            ManifestEntry(path="a.png", label="attack", pai_type="P H", dataset_id="CLK")

    def test_empty_subject_is_none(self):
        """An empty subject id reads as missing."""
        assert ManifestEntry(path="a.png", label="bonafide", dataset_id="CLK", subject_id="").subject_id is None


class TestLoadManifest:
    """CSV manifest parsing with line-numbered errors."""

    def test_attack_row(self, dataset_dir):
        """An attack row parses into an entry with an absolute image path."""
        entries = load_manifest(write(dataset_dir, "img/a.png,attack,PH,CLK,\n"))
        assert len(entries) == 1
        entry = entries[0]
        assert entry.label == "attack" and entry.pai_type == "PH" and entry.dataset_id == "CLK"
        assert entry.subject_id is None
        assert entry.path == str((dataset_dir / "img" / "a.png").resolve())

    def test_bad_label_names_line(self, dataset_dir):
        """A bad label is reported with its file line."""
        body = "img/a.png,bonafide,,CLK,s1\nimg/b.png,genuine,,CLK,s2\n"
        with pytest.raises(ManifestError) as excinfo:
            load_manifest(write(dataset_dir, body))
        assert len(excinfo.value.offenders) == 1
        assert excinfo.value.offenders[0].startswith("line 3")

    def test_line_numbers_survive_blank_lines(self, dataset_dir):
        """Blank lines are reported and do not shift the numbers of later rows."""
        body = "img/a.png,bonafide,,CLK,s1\n\n\nimg/b.png,genuine,,CLK,s2\n"
        with pytest.raises(ManifestError) as excinfo:
            load_manifest(write(dataset_dir, body))
        offenders = excinfo.value.offenders
        assert offenders[:2] == ["line 3: blank row", "line 4: blank row"]
        assert len(offenders) == 3 and offenders[2].startswith("line 5: ")

    def test_duplicates_listed(self, dataset_dir):
        """A repeated path names both lines."""
        body = "img/a.png,bonafide,,CLK,\nimg/b.png,bonafide,,CLK,\nimg/a.png,attack,PH,CLK,\n"
        with pytest.raises(ManifestError) as excinfo:
            load_manifest(write(dataset_dir, body))
        assert excinfo.value.offenders == ["line 4: duplicate path img/a.png (first seen on line 2)"]

    def test_missing_columns(self, dataset_dir):
        """Missing required columns are listed."""
        with pytest.raises(ManifestError, match="missing columns: pai_type, dataset_id"):
            load_manifest(write(dataset_dir, "img/a.png,bonafide\n", header="path,label\n"))

    def test_unknown_columns(self, dataset_dir):
        """Unexpected columns are listed."""
        header = "path,label,pai_type,dataset_id,quality\n"
        with pytest.raises(ManifestError, match="unknown columns: quality"):
            load_manifest(write(dataset_dir, "img/a.png,bonafide,,CLK,0.9\n", header=header))

    def test_subject_column_optional(self, dataset_dir):
        """The subject column may be left out."""
        entries = load_manifest(write(dataset_dir, "img/a.png,bonafide,,CLK\n", header="path,label,pai_type,dataset_id\n"))
        assert entries[0].subject_id is None

    def test_empty_manifest_warns(self, dataset_dir):
        """A header-only manifest loads empty with a warning."""
        messages = []
        handler = logger.add(messages.append, level="WARNING")
        try:
            assert load_manifest(write(dataset_dir, "")) == []
        finally:
            logger.remove(handler)
        assert any("contains no entries" in str(m) for m in messages)

    def test_missing_image(self, dataset_dir):
        """Missing images are reported unless file checks are off."""
        with pytest.raises(ManifestError) as excinfo:
            load_manifest(write(dataset_dir, "img/zzz.png,bonafide,,CLK,\n"))
        assert "image not found" in excinfo.value.offenders[0]
        assert load_manifest(write(dataset_dir, "img/zzz.png,bonafide,,CLK,\n"), check_files=False)

    def test_path_traversal_rejected(self, dataset_dir):
        """Paths that leave the dataset root are refused."""
        with pytest.raises(ManifestError) as excinfo:
            load_manifest(write(dataset_dir, "../../etc/passwd,bonafide,,CLK,\n"), check_files=False)
        assert "escapes dataset root" in excinfo.value.offenders[0]

    def test_missing_file(self, tmp_path):
        """A missing manifest file raises ManifestError."""
        with pytest.raises(ManifestError, match="not found"):
            load_manifest(tmp_path / "nope.csv")

    def test_version_line(self, dataset_dir):
        """Version 1 comment lines are accepted and other versions refused."""
        path = write(dataset_dir, "img/a.png,bonafide,,CLK,\n", header="# manifest-version: 1\n" + HEADER)
        assert len(load_manifest(path)) == 1
        path = write(dataset_dir, "img/a.png,bonafide,,CLK,\n", header="# manifest-version: 2\n" + HEADER)
        with pytest.raises(ManifestError, match="version 2"):
            load_manifest(path)

    def test_written_manifest_loads_back(self, dataset_dir):
        """A written manifest loads back to the same entries."""
        entries = [
            ManifestEntry(path="img/a.png", label="bonafide", dataset_id="CLK", subject_id="s1"),
            ManifestEntry(path="img/b.png", label="attack", pai_type="PL", dataset_id="CLK"),
        ]
        loaded = load_manifest(write_manifest(entries, dataset_dir / "out.csv"))
        assert [(e.label, e.pai_type, e.subject_id) for e in loaded] == [("bonafide", "", "s1"), ("attack", "PL", None)]
