"""
Binary codec for synchrophasor data and command frames.

Layout (big-endian):
    SYNC(2) FRAMESIZE(2) IDCODE(2) SOC(4) FRACSEC(4)
    per block: STAT(2) PHASORS FREQ DFREQ
    CHK(2)
Phasors are rectangular: two int16 in fixed16, two float32 in float32.
"""

import struct
from typing import Optional

import crcmod

from config.settings import CODEC_SETTINGS, COMMAND_CODES
from src.models.frames import (FIXED16, FLOAT32, FORMATS, CommandFrame,
                               DataFrame, Phasor, PmuBlock, StreamConfig,
                               Timestamp)
from src.utils.errors import (FrameLengthError, FramingError, IntegrityError,
                              QuantizationOverflowError, UnknownCommandError)

DATA_SYNC = CODEC_SETTINGS['data_sync']
COMMAND_SYNC = CODEC_SETTINGS['command_sync']
HEADER_BYTES = CODEC_SETTINGS['header_bytes']
CRC_BYTES = CODEC_SETTINGS['crc_bytes']
FIXED16_MAX = CODEC_SETTINGS['fixed16_max']
ROCOF_SCALE = CODEC_SETTINGS['rocof_fixed16_scale']
COMMAND_FRAME_BYTES = HEADER_BYTES + 2 + CRC_BYTES
MAX_FRAME_BYTES = 0xFFFF

_HEADER = struct.Struct('>HHHII')
_WORD = struct.Struct('>H')
_COMMANDS_BY_CODE = {code: name for name, code in COMMAND_CODES.items()}

# CRC-CCITT: poly 0x1021, init 0xFFFF, no reflection, no final xor
_crc16 = crcmod.mkCrcFun(0x11021, initCrc=0xFFFF, rev=False, xorOut=0x0000)


def crc_ccitt(data: bytes) -> int:
    return _crc16(bytes(data))


def _field_bytes(fmt: str) -> int:
    return 2 if fmt == FIXED16 else 4


def data_frame_size(n_blocks: int, n_phasors_per_block: int, fmt: str) -> int:
    """Encoded length of a frame with identical blocks"""
    if n_blocks < 0 or n_phasors_per_block < 0:
        raise ValueError("Block and phasor counts must be non-negative")
    if fmt not in FORMATS:
        raise ValueError(f"Unknown data format {fmt!r}")
    word = _field_bytes(fmt)
    block = 2 + n_phasors_per_block * 2 * word + word + word
    return HEADER_BYTES + n_blocks * block + CRC_BYTES


def stream_frame_size(config: StreamConfig) -> int:
    word = _field_bytes(config.fmt)
    body = sum(2 + n * 2 * word + 2 * word for n in config.phasor_counts)
    return HEADER_BYTES + body + CRC_BYTES


def fixed16_scale(nominal: float) -> float:
    """Per-unit value of one count, leaving 50% headroom above nominal"""
    return CODEC_SETTINGS['fixed16_headroom'] * nominal / FIXED16_MAX


def quantize_fixed16(x: float, scale: float) -> int:
    """Round x/scale to the nearest signed 16-bit count"""
    if scale <= 0:
        raise ValueError("scale must be positive")
    q = int(round(x / scale))
    if abs(q) > FIXED16_MAX:
        raise QuantizationOverflowError(f"{x} does not fit in fixed16 at scale {scale}")
    return q


def dequantize_fixed16(q: int, scale: float) -> float:
    return q * scale


def _int16(value: float, what: str) -> int:
    q = int(round(value))
    if abs(q) > FIXED16_MAX:
        raise QuantizationOverflowError(f"{what} {value} overflows fixed16")
    return q


def _encode_block(block: PmuBlock, index: int, config: StreamConfig) -> bytes:
    n = len(block.phasors)
    if config.fmt == FIXED16:
        values = []
        for k, phasor in enumerate(block.phasors):
            scale = fixed16_scale(config.nominal(index, k))
            values.append(quantize_fixed16(phasor.re, scale))
            values.append(quantize_fixed16(phasor.im, scale))
        values.append(_int16(block.freq_dev, "FREQ"))
        values.append(_int16(block.rocof * ROCOF_SCALE, "DFREQ"))
        return struct.pack(f'>H{2 * n + 2}h', block.stat, *values)

    values = []
    for phasor in block.phasors:
        values.extend((phasor.re, phasor.im))
    values.extend((block.freq_dev, block.rocof))
    return struct.pack(f'>H{2 * n + 2}f', block.stat, *values)


def encode_data_frame(frame: DataFrame, config: Optional[StreamConfig] = None) -> bytes:
    """Serialize a data frame; FRAMESIZE and CHK are computed here"""
    if config is None:
        config = StreamConfig.for_frame(frame)
    if tuple(frame.phasor_counts) != config.phasor_counts or frame.fmt != config.fmt:
        raise ValueError("Frame shape does not match its stream configuration")

    size = stream_frame_size(config)
    if size > MAX_FRAME_BYTES:
        raise FrameLengthError(f"Frame of {size} bytes exceeds the 16-bit FRAMESIZE field")

    parts = [_HEADER.pack(DATA_SYNC, size, frame.idcode, frame.timestamp.soc, frame.timestamp.fracsec)]
    parts.extend(_encode_block(block, i, config) for i, block in enumerate(frame.blocks))
    body = b''.join(parts)
    return body + _WORD.pack(crc_ccitt(body))


def _check_envelope(data: bytes, sync: int) -> None:
    if len(data) < HEADER_BYTES + CRC_BYTES:
        raise FrameLengthError(f"Truncated frame: {len(data)} bytes")
    found_sync, size = struct.unpack_from('>HH', data)
    if found_sync != sync:
        raise FramingError(f"Bad SYNC word 0x{found_sync:04X}, expected 0x{sync:04X}")
    if size != len(data):
        raise FrameLengthError(f"FRAMESIZE says {size} bytes but {len(data)} were received")
    expected = _WORD.unpack_from(data, len(data) - CRC_BYTES)[0]
    if crc_ccitt(data[:-CRC_BYTES]) != expected:
        raise IntegrityError("CRC mismatch")


def _infer_config(data: bytes) -> StreamConfig:
    """Single float32 block, phasor count from length"""
    payload = len(data) - HEADER_BYTES - CRC_BYTES - 2 - 8
    if payload < 0 or payload % 8:
        raise FrameLengthError("Cannot infer a single float32 block from frame length")
    return StreamConfig(FLOAT32, (payload // 8,))


def decode_data_frame(data: bytes, config: Optional[StreamConfig] = None) -> DataFrame:
    """Parse and verify a data frame; config defaults to one float32 block"""
    data = bytes(data)
    _check_envelope(data, DATA_SYNC)
    if config is None:
        config = _infer_config(data)
    if stream_frame_size(config) != len(data):
        raise FrameLengthError(
            f"Frame is {len(data)} bytes but the stream configuration implies {stream_frame_size(config)}")

    _, _, idcode, soc, fracsec = _HEADER.unpack_from(data)
    offset = HEADER_BYTES
    blocks = []
    for index, n in enumerate(config.phasor_counts):
        if config.fmt == FIXED16:
            layout = struct.Struct(f'>H{2 * n + 2}h')
        else:
            layout = struct.Struct(f'>H{2 * n + 2}f')
        stat, *values = layout.unpack_from(data, offset)
        offset += layout.size

        phasors = []
        for k in range(n):
            re, im = values[2 * k], values[2 * k + 1]
            if config.fmt == FIXED16:
                scale = fixed16_scale(config.nominal(index, k))
                re, im = dequantize_fixed16(re, scale), dequantize_fixed16(im, scale)
            phasors.append(Phasor(float(re), float(im)))
        freq, dfreq = values[-2], values[-1]
        if config.fmt == FIXED16:
            freq, dfreq = float(freq), dfreq / ROCOF_SCALE
        blocks.append(PmuBlock(stat, tuple(phasors), float(freq), float(dfreq)))

    return DataFrame(idcode, Timestamp(soc, fracsec), tuple(blocks), config.fmt)


def encode_command(command: CommandFrame) -> bytes:
    body = _HEADER.pack(COMMAND_SYNC, COMMAND_FRAME_BYTES, command.idcode,
                        command.timestamp.soc, command.timestamp.fracsec)
    body += _WORD.pack(command.code)
    return body + _WORD.pack(crc_ccitt(body))


def decode_command(data: bytes) -> CommandFrame:
    data = bytes(data)
    _check_envelope(data, COMMAND_SYNC)
    if len(data) != COMMAND_FRAME_BYTES:
        raise FrameLengthError(f"Command frames are {COMMAND_FRAME_BYTES} bytes, got {len(data)}")
    _, _, idcode, soc, fracsec = _HEADER.unpack_from(data)
    code = _WORD.unpack_from(data, HEADER_BYTES)[0]
    if code not in _COMMANDS_BY_CODE:
        raise UnknownCommandError(f"Unknown command code 0x{code:04X}")
    return CommandFrame(idcode, Timestamp(soc, fracsec), _COMMANDS_BY_CODE[code])


def frame_kind(data: bytes) -> str:
    """Peek at the SYNC word: 'data' or 'command'"""
    if len(data) < 2:
        raise FrameLengthError("Truncated frame")
    sync = _WORD.unpack_from(data)[0]
    if sync == DATA_SYNC:
        return 'data'
    if sync == COMMAND_SYNC:
        return 'command'
    raise FramingError(f"Unknown SYNC word 0x{sync:04X}")
