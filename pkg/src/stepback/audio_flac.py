"""Self-contained FLAC reader/writer.

No system codec or audio library is assumed. The reader handles the full
subset emitted by mainstream encoders: CONSTANT / VERBATIM / FIXED / LPC
subframes, Rice and Rice2 residual partitions, wasted bits, and all four
stereo decorrelation modes. The writer is deliberately small (fixed
predictors up to order 2, single Rice partition) but produces fully
compliant streams, which also gives the reader a round-trip test surface.

Only streaming decode of whole files is supported; no seeking.
"""

from __future__ import annotations

import numpy as np

from .errors import AudioReadError

_SYNC_CODE = 0x3FFE
_BLOCKSIZE = 4096


def _crc_table(poly: int, width: int) -> list[int]:
    mask = (1 << width) - 1
    top = 1 << (width - 1)
    table = []
    for byte in range(256):
        crc = byte << (width - 8)
        for _ in range(8):
            crc = ((crc << 1) ^ poly) & mask if crc & top else (crc << 1) & mask
        table.append(crc)
    return table


_CRC8_TABLE = _crc_table(0x07, 8)
_CRC16_TABLE = _crc_table(0x8005, 16)


def _crc8(data: bytes) -> int:
    crc = 0
    for b in data:
        crc = _CRC8_TABLE[crc ^ b]
    return crc


def _crc16(data: bytes) -> int:
    crc = 0
    for b in data:
        crc = _CRC16_TABLE[((crc >> 8) ^ b) & 0xFF] ^ ((crc << 8) & 0xFFFF)
    return crc


class BitReader:
    """MSB-first bit reader over an immutable byte buffer."""

    def __init__(self, data: bytes, pos_bits: int = 0):
        self.data = data
        self.pos = pos_bits

    def read(self, n: int) -> int:
        if n == 0:
            return 0
        start, off = divmod(self.pos, 8)
        end = (self.pos + n + 7) // 8
        if end > len(self.data):
            raise AudioReadError("unexpected end of FLAC stream")
        chunk = int.from_bytes(self.data[start:end], "big")
        chunk >>= (end - start) * 8 - off - n
        self.pos += n
        return chunk & ((1 << n) - 1)

    def read_signed(self, n: int) -> int:
        v = self.read(n)
        if v >= 1 << (n - 1):
            v -= 1 << n
        return v

    def read_unary(self) -> int:
        count = 0
        while True:
            byte_i, bit_i = divmod(self.pos, 8)
            if byte_i >= len(self.data):
                raise AudioReadError("unexpected end of FLAC stream")
            b = self.data[byte_i] & (0xFF >> bit_i)
            if b == 0:
                count += 8 - bit_i
                self.pos += 8 - bit_i
            else:
                zeros = (8 - bit_i) - b.bit_length()
                self.pos += zeros + 1
                return count + zeros

    def align_to_byte(self) -> None:
        self.pos = (self.pos + 7) // 8 * 8

    def byte_pos(self) -> int:
        return self.pos // 8


class BitWriter:
    """MSB-first bit accumulator."""

    def __init__(self):
        self._acc = 0
        self._nbits = 0

    def write(self, value: int, n: int) -> None:
        if n == 0:
            return
        self._acc = (self._acc << n) | (value & ((1 << n) - 1))
        self._nbits += n

    def write_signed(self, value: int, n: int) -> None:
        self.write(value & ((1 << n) - 1), n)

    def write_unary(self, q: int) -> None:
        self._acc <<= q + 1
        self._acc |= 1
        self._nbits += q + 1

    def align_to_byte(self) -> None:
        pad = -self._nbits % 8
        if pad:
            self.write(0, pad)

    def getvalue(self) -> bytes:
        self.align_to_byte()
        return self._acc.to_bytes(self._nbits // 8, "big")


def _read_utf8_number(br: BitReader) -> int:
    first = br.read(8)
    if first < 0x80:
        return first
    n_follow = 0
    mask = 0x40
    while first & mask:
        n_follow += 1
        mask >>= 1
    if n_follow == 0 or n_follow > 6:
        raise AudioReadError("malformed coded number in frame header")
    value = first & (mask - 1)
    for _ in range(n_follow):
        cont = br.read(8)
        if cont & 0xC0 != 0x80:
            raise AudioReadError("malformed coded number in frame header")
        value = (value << 6) | (cont & 0x3F)
    return value


def _write_utf8_number(bw: BitWriter, value: int) -> None:
    if value < 0x80:
        bw.write(value, 8)
        return
    for n_follow in range(1, 7):
        if value < 1 << (6 - n_follow + 6 * n_follow):
            break
    else:
        raise ValueError("coded number too large")
    payload = [(value >> (6 * i)) & 0x3F for i in range(n_follow)][::-1]
    lead_ones = (0xFF << (7 - n_follow)) & 0xFF
    bw.write(lead_ones | (value >> (6 * n_follow)), 8)
    for p in payload:
        bw.write(0x80 | p, 8)


_FIXED_COEFS = {
    1: [1],
    2: [2, -1],
    3: [3, -3, 1],
    4: [4, -6, 4, -1],
}


def _restore_fixed(warmup: list[int], resid: np.ndarray, order: int) -> np.ndarray:
    if order == 0:
        return resid.astype(np.int64)
    out = np.empty(order + len(resid), dtype=np.int64)
    out[:order] = warmup
    levels = [np.asarray(warmup, dtype=np.int64)]
    for _ in range(order - 1):
        levels.append(np.diff(levels[-1]))
    cur = resid.astype(np.int64)
    for k in range(order, 0, -1):
        cur = levels[k - 1][-1] + np.cumsum(cur)
    out[order:] = cur
    return out


def _restore_lpc(warmup: list[int], resid: np.ndarray, coefs: list[int], shift: int) -> np.ndarray:
    order = len(coefs)
    n = order + len(resid)
    out = [0] * n
    out[:order] = [int(w) for w in warmup]
    rl = resid.tolist()
    for i in range(order, n):
        acc = 0
        for j, c in enumerate(coefs):
            acc += c * out[i - 1 - j]
        out[i] = rl[i - order] + (acc >> shift)
    return np.asarray(out, dtype=np.int64)


def _read_residual(br: BitReader, blocksize: int, order: int) -> np.ndarray:
    method = br.read(2)
    if method > 1:
        raise AudioReadError("reserved residual coding method")
    param_bits = 4 if method == 0 else 5
    escape = (1 << param_bits) - 1
    porder = br.read(4)
    n_parts = 1 << porder
    if blocksize % n_parts != 0:
        raise AudioReadError("invalid residual partition order")
    out = np.empty(blocksize - order, dtype=np.int64)
    filled = 0
    for part in range(n_parts):
        count = blocksize >> porder
        if part == 0:
            count -= order
        param = br.read(param_bits)
        if param == escape:
            raw_bits = br.read(5)
            if raw_bits == 0:
                out[filled:filled + count] = 0
            else:
                for i in range(count):
                    out[filled + i] = br.read_signed(raw_bits)
        else:
            for i in range(count):
                q = br.read_unary()
                v = (q << param) | br.read(param)
                out[filled + i] = (v >> 1) ^ -(v & 1)
        filled += count
    return out


def _read_subframe(br: BitReader, blocksize: int, bps: int) -> np.ndarray:
    if br.read(1) != 0:
        raise AudioReadError("invalid subframe padding bit")
    sf_type = br.read(6)
    wasted = 0
    if br.read(1):
        wasted = br.read_unary() + 1
    eff_bps = bps - wasted
    if sf_type == 0:
        value = br.read_signed(eff_bps)
        samples = np.full(blocksize, value, dtype=np.int64)
    elif sf_type == 1:
        samples = np.fromiter(
            (br.read_signed(eff_bps) for _ in range(blocksize)), dtype=np.int64, count=blocksize
        )
    elif 8 <= sf_type <= 12:
        order = sf_type - 8
        warmup = [br.read_signed(eff_bps) for _ in range(order)]
        resid = _read_residual(br, blocksize, order)
        samples = _restore_fixed(warmup, resid, order)
    elif sf_type >= 32:
        order = (sf_type & 31) + 1
        warmup = [br.read_signed(eff_bps) for _ in range(order)]
        precision = br.read(4) + 1
        if precision == 16:
            raise AudioReadError("invalid LPC coefficient precision")
        shift = br.read_signed(5)
        if shift < 0:
            raise AudioReadError("negative LPC shift")
        coefs = [br.read_signed(precision) for _ in range(order)]
        resid = _read_residual(br, blocksize, order)
        samples = _restore_lpc(warmup, resid, coefs, shift)
    else:
        raise AudioReadError(f"reserved subframe type {sf_type}")
    if wasted:
        samples = samples << wasted
    return samples


_BPS_CODES = {1: 8, 2: 12, 4: 16, 5: 20, 6: 24, 7: 32}


def read_flac(path) -> tuple[np.ndarray, int, int]:
    """Decode a FLAC file.

    Returns (samples[n, channels] as int32, sample_rate, bits_per_sample).
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"fLaC":
        raise AudioReadError(f"{path}: not a FLAC stream")
    pos = 4
    streaminfo = None
    while True:
        if pos + 4 > len(data):
            raise AudioReadError(f"{path}: truncated metadata")
        header = data[pos]
        length = int.from_bytes(data[pos + 1:pos + 4], "big")
        block_type = header & 0x7F
        body = data[pos + 4:pos + 4 + length]
        if block_type == 0:
            si = BitReader(body)
            si.read(16)  # min blocksize
            si.read(16)  # max blocksize
            si.read(24)  # min framesize
            si.read(24)  # max framesize
            sample_rate = si.read(20)
            channels = si.read(3) + 1
            bps = si.read(5) + 1
            total = si.read(36)
            streaminfo = (sample_rate, channels, bps, total)
        pos += 4 + length
        if header & 0x80:
            break
    if streaminfo is None:
        raise AudioReadError(f"{path}: missing stream info")
    sample_rate, n_channels, bps, total = streaminfo

    br = BitReader(data, pos * 8)
    blocks = []
    while br.byte_pos() < len(data):
        frame_start = br.byte_pos()
        if br.read(14) != _SYNC_CODE:
            raise AudioReadError(f"{path}: lost frame sync at byte {frame_start}")
        br.read(1)  # reserved
        br.read(1)  # blocking strategy
        bs_code = br.read(4)
        sr_code = br.read(4)
        ch_code = br.read(4)
        ss_code = br.read(3)
        br.read(1)  # reserved
        _read_utf8_number(br)
        if bs_code == 0:
            raise AudioReadError("reserved blocksize code")
        elif bs_code == 1:
            blocksize = 192
        elif bs_code <= 5:
            blocksize = 576 << (bs_code - 2)
        elif bs_code == 6:
            blocksize = br.read(8) + 1
        elif bs_code == 7:
            blocksize = br.read(16) + 1
        else:
            blocksize = 256 << (bs_code - 8)
        if sr_code == 12:
            br.read(8)
        elif sr_code in (13, 14):
            br.read(16)
        elif sr_code == 15:
            raise AudioReadError("invalid sample rate code")
        header_crc = br.read(8)
        if _crc8(data[frame_start:br.byte_pos() - 1]) != header_crc:
            raise AudioReadError(f"{path}: frame header CRC mismatch")
        frame_bps = _BPS_CODES.get(ss_code, bps) if ss_code else bps

        if ch_code < 8:
            chans = [_read_subframe(br, blocksize, frame_bps) for _ in range(ch_code + 1)]
        elif ch_code == 8:  # left/side
            left = _read_subframe(br, blocksize, frame_bps)
            side = _read_subframe(br, blocksize, frame_bps + 1)
            chans = [left, left - side]
        elif ch_code == 9:  # right/side
            side = _read_subframe(br, blocksize, frame_bps + 1)
            right = _read_subframe(br, blocksize, frame_bps)
            chans = [right + side, right]
        elif ch_code == 10:  # mid/side
            mid = _read_subframe(br, blocksize, frame_bps)
            side = _read_subframe(br, blocksize, frame_bps + 1)
            mid = (mid << 1) | (side & 1)
            chans = [(mid + side) >> 1, (mid - side) >> 1]
        else:
            raise AudioReadError(f"reserved channel assignment {ch_code}")
        br.align_to_byte()
        frame_crc = br.read(16)
        if _crc16(data[frame_start:br.byte_pos() - 2]) != frame_crc:
            raise AudioReadError(f"{path}: frame CRC mismatch")
        blocks.append(np.stack(chans, axis=1))

    if not blocks:
        raise AudioReadError(f"{path}: stream has no audio frames")
    samples = np.concatenate(blocks, axis=0)
    if total and len(samples) > total:
        samples = samples[:total]
    if samples.shape[1] != n_channels:
        raise AudioReadError(f"{path}: channel count mismatch")
    return samples.astype(np.int32), sample_rate, bps


def _best_rice_param(zigzag: np.ndarray) -> int:
    best_k, best_bits = 0, None
    for k in range(15):
        bits = int(np.sum(zigzag >> k)) + len(zigzag) * (k + 1)
        if best_bits is None or bits < best_bits:
            best_k, best_bits = k, bits
        elif bits > best_bits * 2:
            break
    return best_k


def _write_residual(bw: BitWriter, resid: np.ndarray) -> None:
    zigzag = np.where(resid >= 0, resid << 1, ((-resid) << 1) - 1).astype(np.int64)
    param = _best_rice_param(zigzag)
    bw.write(0, 2)       # Rice method, 4-bit params
    bw.write(0, 4)       # single partition
    bw.write(param, 4)
    for v in zigzag.tolist():
        bw.write_unary(v >> param)
        bw.write(v & ((1 << param) - 1), param)


def _write_subframe(bw: BitWriter, chan: np.ndarray, bps: int) -> None:
    chan = chan.astype(np.int64)
    blocksize = len(chan)
    if np.all(chan == chan[0]):
        bw.write(0, 1)
        bw.write(0, 6)
        bw.write(0, 1)
        bw.write_signed(int(chan[0]), bps)
        return
    candidates: list[tuple[int, int, np.ndarray]] = []
    for order in range(min(2, blocksize - 1) + 1):
        resid = chan[order:].copy()
        for j, c in enumerate(_FIXED_COEFS.get(order, [])):
            resid -= c * chan[order - 1 - j:blocksize - 1 - j]
        cost = int(np.sum(np.abs(resid)))
        candidates.append((cost, order, resid))
    cost, order, resid = min(candidates, key=lambda t: t[0])
    # Unary quotients explode if residuals are enormous; verbatim is safe then.
    if len(resid) and int(np.max(np.abs(resid))) > 1 << 30:
        bw.write(0, 1)
        bw.write(1, 6)
        bw.write(0, 1)
        for v in chan.tolist():
            bw.write_signed(v, bps)
        return
    bw.write(0, 1)
    bw.write(8 + order, 6)
    bw.write(0, 1)
    for w in chan[:order].tolist():
        bw.write_signed(w, bps)
    _write_residual(bw, resid)


def write_flac(path, samples: np.ndarray, sample_rate: int) -> None:
    """Encode 16-bit PCM samples [n] or [n, channels] to a FLAC file."""
    samples = np.asarray(samples)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.dtype != np.int16:
        raise ValueError("write_flac expects int16 samples")
    n, n_channels = samples.shape
    if n == 0:
        raise ValueError("cannot encode an empty signal")

    out = bytearray(b"fLaC")
    si = BitWriter()
    si.write(_BLOCKSIZE, 16)
    si.write(_BLOCKSIZE, 16)
    si.write(0, 24)
    si.write(0, 24)
    si.write(sample_rate, 20)
    si.write(n_channels - 1, 3)
    si.write(15, 5)  # 16 bps
    si.write(n, 36)
    si.write(0, 128)  # md5 unset
    body = si.getvalue()
    out.append(0x80)  # last metadata block, STREAMINFO
    out += len(body).to_bytes(3, "big")
    out += body

    for frame_idx, start in enumerate(range(0, n, _BLOCKSIZE)):
        block = samples[start:start + _BLOCKSIZE]
        bw = BitWriter()
        bw.write(_SYNC_CODE, 14)
        bw.write(0, 1)
        bw.write(0, 1)  # fixed blocksize stream
        bw.write(7, 4)  # blocksize given as 16 bits below
        bw.write(0, 4)  # sample rate from stream info
        bw.write(n_channels - 1, 4)
        bw.write(4, 3)  # 16 bps
        bw.write(0, 1)
        _write_utf8_number(bw, frame_idx)
        bw.write(len(block) - 1, 16)
        header = bw.getvalue()
        header += bytes([_crc8(header)])
        bw = BitWriter()
        for ch in range(n_channels):
            _write_subframe(bw, block[:, ch], 16)
        frame = header + bw.getvalue()
        frame += _crc16(frame).to_bytes(2, "big")
        out += frame

    with open(path, "wb") as fh:
        fh.write(out)
