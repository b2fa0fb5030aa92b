import json
import struct

import numpy as np
import pytest

from drcn.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from drcn.errors import DataError
from drcn.model import ModelConfig, init_params


@pytest.fixture
def params():
    return init_params(ModelConfig(recursions=3, filters=4, precision="float32"), seed=5)


class TestFormat:
    def test_byte_layout(self, params):
        """Parse the blob with nothing but struct/json, independent of the writer."""
        blob = checkpoint_bytes(params, scale=2)
        assert blob[:4] == b"DRCN"
        version, header_len = struct.unpack_from("<II", blob, 4)
        assert version == 1
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
        assert header == {
            "recursions": 3,
            "filters": 4,
            "in_channels": 1,
            "out_channels": 1,
            "scale": 2,
        }
        payload = np.frombuffer(blob, dtype="<f4", offset=12 + header_len)
        f = header["filters"]
        expected_floats = (
            (f * 1 * 9 + f)  # embed1
            + (f * f * 9 + f) * 3  # embed2, recursive, recon1
            + (1 * f * 9 + 1)  # recon2
            + header["recursions"]
        )
        assert payload.size == expected_floats
        # embed1 weights come first, in (out, in, row, col) row-major order.
        w = params.embed1.weights.data.astype("<f4").ravel()
        np.testing.assert_array_equal(payload[: w.size], w)
        # ensemble weights close the file
        np.testing.assert_array_equal(payload[-3:], params.ensemble_w.data.astype("<f4"))

    def test_roundtrip_bit_exact(self, params, tmp_path):
        path = tmp_path / "model.drcn"
        save_checkpoint(path, params, scale=3)
        loaded, meta = load_checkpoint(path)
        assert meta.scale == 3
        assert meta.recursions == 3
        for (name, original), (_, restored) in zip(
            params.named_tensors().items(), loaded.named_tensors().items()
        ):
            assert np.array_equal(original.data, restored.data), name
            assert restored.data.dtype == np.float32

    def test_save_is_deterministic(self, params):
        assert checkpoint_bytes(params, scale=2) == checkpoint_bytes(params, scale=2)

    def test_no_temp_files_left(self, params, tmp_path):
        save_checkpoint(tmp_path / "model.drcn", params, scale=2)
        assert [p.name for p in tmp_path.iterdir()] == ["model.drcn"]


class TestCorruption:
    def test_bad_magic(self, params, tmp_path):
        path = tmp_path / "bad.drcn"
        blob = checkpoint_bytes(params, scale=2)
        path.write_bytes(b"XXXX" + blob[4:])
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_truncated_payload(self, params, tmp_path):
        path = tmp_path / "short.drcn"
        blob = checkpoint_bytes(params, scale=2)
        path.write_bytes(blob[:-10])
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_trailing_garbage(self, params, tmp_path):
        path = tmp_path / "long.drcn"
        path.write_bytes(checkpoint_bytes(params, scale=2) + b"\x00\x00")
        with pytest.raises(DataError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / "absent.drcn")

    def test_bad_version(self, params, tmp_path):
        path = tmp_path / "vers.drcn"
        blob = bytearray(checkpoint_bytes(params, scale=2))
        blob[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(blob))
        with pytest.raises(DataError):
            load_checkpoint(path)
