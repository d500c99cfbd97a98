//! File-based application-layer codec shared by node, gateway and backend.
//!
//! Every over-the-air exchange is a file operation (read, write, return
//! data) on one of two registered files: 0x40 holds the latest sensor
//! record, 0x41 the node configuration. Frames carry a fixed 17-byte
//! header followed by the payload and a CRC-16/CCITT-FALSE over all
//! preceding bytes.
//!
//! Wire layout (all multi-byte fields little-endian):
//!
//! ```text
//! version(1) origin(8) counter(2) op(1) file(1) offset(2) length(2) | payload | crc(2)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Protocol version carried in every frame.
pub const ALP_VERSION: u8 = 1;

/// Fixed header size in bytes.
pub const HEADER_LEN: usize = 17;

/// Smallest possible frame: header plus CRC.
pub const MIN_FRAME_LEN: usize = HEADER_LEN + 2;

/// Largest accepted payload.
pub const MAX_PAYLOAD_LEN: usize = 239;

/// Sensor data file: latest `SensorDataRecord`, 11 bytes.
pub const FILE_SENSOR_DATA: FileId = FileId(0x40);

/// Configuration file: `NodeConfig`, 6 bytes.
pub const FILE_CONFIG: FileId = FileId(0x41);

/// 64-bit device identifier, nonzero and unique within a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// 8-bit file identifier. Only the registered IDs are accepted by the
/// file registry; everything else is rejected at lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FileId(pub u8);

impl FileId {
    pub fn is_registered(self) -> bool {
        self == FILE_SENSOR_DATA || self == FILE_CONFIG
    }
}

impl std::fmt::Display for FileId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "0x{:02x}", self.0)
    }
}

/// File operation carried by a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum AlpOp {
    ReadFileRequest = 0x00,
    WriteFileRequest = 0x01,
    ReturnFileData = 0x02,
}

impl AlpOp {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            0x00 => Some(AlpOp::ReadFileRequest),
            0x01 => Some(AlpOp::WriteFileRequest),
            0x02 => Some(AlpOp::ReturnFileData),
            _ => None,
        }
    }
}

/// One application-layer protocol data unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlpFrame {
    pub version: u8,
    pub origin: NodeId,
    pub counter: u16,
    pub op: AlpOp,
    pub file: FileId,
    pub offset: u16,
    pub length: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlpError {
    #[error("payload too large: {0} bytes (max {MAX_PAYLOAD_LEN})")]
    PayloadTooLarge(usize),
    #[error("frame invariant violated: {0}")]
    InvariantViolation(String),
    #[error("frame too short: {0} bytes (min {MIN_FRAME_LEN})")]
    TooShort(usize),
    #[error("CRC mismatch")]
    BadCrc,
    #[error("unknown op code 0x{0:02x}")]
    UnknownOp(u8),
    #[error("declared length {declared} != payload length {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unsupported version {0}")]
    UnknownVersion(u8),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, xorout 0.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &b in data {
        crc ^= (b as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
        }
    }
    crc
}

impl AlpFrame {
    fn check_invariants(&self) -> Result<(), AlpError> {
        if self.payload.len() > MAX_PAYLOAD_LEN {
            return Err(AlpError::PayloadTooLarge(self.payload.len()));
        }
        if self.length as usize != self.payload.len() {
            return Err(AlpError::LengthMismatch {
                declared: self.length as usize,
                actual: self.payload.len(),
            });
        }
        if self.op == AlpOp::ReadFileRequest && !self.payload.is_empty() {
            return Err(AlpError::InvariantViolation(
                "ReadFileRequest carries a payload".into(),
            ));
        }
        if self.origin.0 == 0 {
            return Err(AlpError::InvariantViolation("origin id is zero".into()));
        }
        Ok(())
    }
}

/// Serializes a frame to its wire form: header + payload + CRC.
pub fn encode_frame(frame: &AlpFrame) -> Result<Vec<u8>, AlpError> {
    frame.check_invariants()?;
    let mut out = Vec::with_capacity(MIN_FRAME_LEN + frame.payload.len());
    out.push(frame.version);
    out.extend_from_slice(&frame.origin.0.to_le_bytes());
    out.extend_from_slice(&frame.counter.to_le_bytes());
    out.push(frame.op as u8);
    out.push(frame.file.0);
    out.extend_from_slice(&frame.offset.to_le_bytes());
    out.extend_from_slice(&frame.length.to_le_bytes());
    out.extend_from_slice(&frame.payload);
    let crc = crc16_ccitt_false(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parses a wire-form byte sequence back into a frame.
pub fn decode_frame(bytes: &[u8]) -> Result<AlpFrame, AlpError> {
    if bytes.len() < MIN_FRAME_LEN {
        return Err(AlpError::TooShort(bytes.len()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 2);
    let declared_crc = u16::from_le_bytes([crc_bytes[0], crc_bytes[1]]);
    if crc16_ccitt_false(body) != declared_crc {
        return Err(AlpError::BadCrc);
    }
    let version = body[0];
    if version != ALP_VERSION {
        return Err(AlpError::UnknownVersion(version));
    }
    let origin = NodeId(u64::from_le_bytes(body[1..9].try_into().unwrap()));
    let counter = u16::from_le_bytes([body[9], body[10]]);
    let op = AlpOp::from_code(body[11]).ok_or(AlpError::UnknownOp(body[11]))?;
    let file = FileId(body[12]);
    let offset = u16::from_le_bytes([body[13], body[14]]);
    let length = u16::from_le_bytes([body[15], body[16]]);
    let payload = body[HEADER_LEN..].to_vec();
    if length as usize != payload.len() {
        return Err(AlpError::LengthMismatch {
            declared: length as usize,
            actual: payload.len(),
        });
    }
    Ok(AlpFrame {
        version,
        origin,
        counter,
        op,
        file,
        offset,
        length,
        payload,
    })
}

/// Sensor kind codes; the code byte is the wire value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensorKind {
    /// 1-Wire soil probe.
    SoilTemp,
    /// SDI-12 water content probe.
    WaterContent,
    /// SDI-12 weather station (modeled as a single air-temperature channel).
    Weather,
    /// On-board temperature/humidity.
    AmbientTRH,
}

impl SensorKind {
    pub fn code(self) -> u8 {
        match self {
            SensorKind::SoilTemp => 0x01,
            SensorKind::WaterContent => 0x02,
            SensorKind::Weather => 0x03,
            SensorKind::AmbientTRH => 0x04,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(SensorKind::SoilTemp),
            0x02 => Some(SensorKind::WaterContent),
            0x03 => Some(SensorKind::Weather),
            0x04 => Some(SensorKind::AmbientTRH),
            _ => None,
        }
    }
}

/// Content of file 0x40: one decoded measurement, 11 bytes on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorDataRecord {
    /// Seconds since scenario epoch.
    pub timestamp: u32,
    pub sensor_kind: SensorKind,
    /// Physical value x100 (fixed point, two decimals).
    pub value_scaled: i32,
    pub battery_mv: u16,
}

/// Wire size of a `SensorDataRecord`.
pub const SENSOR_RECORD_LEN: usize = 11;

impl SensorDataRecord {
    pub fn to_bytes(&self) -> [u8; SENSOR_RECORD_LEN] {
        let mut out = [0u8; SENSOR_RECORD_LEN];
        out[0..4].copy_from_slice(&self.timestamp.to_le_bytes());
        out[4] = self.sensor_kind.code();
        out[5..9].copy_from_slice(&self.value_scaled.to_le_bytes());
        out[9..11].copy_from_slice(&self.battery_mv.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AlpError> {
        if bytes.len() != SENSOR_RECORD_LEN {
            return Err(AlpError::LengthMismatch {
                declared: SENSOR_RECORD_LEN,
                actual: bytes.len(),
            });
        }
        let sensor_kind = SensorKind::from_code(bytes[4]).ok_or(AlpError::InvariantViolation(
            format!("unknown sensor kind 0x{:02x}", bytes[4]),
        ))?;
        let battery_mv = u16::from_le_bytes([bytes[9], bytes[10]]);
        if battery_mv > 4000 {
            return Err(AlpError::InvariantViolation(format!(
                "battery_mv {battery_mv} out of range"
            )));
        }
        Ok(SensorDataRecord {
            timestamp: u32::from_le_bytes(bytes[0..4].try_into().unwrap()),
            sensor_kind,
            value_scaled: i32::from_le_bytes(bytes[5..9].try_into().unwrap()),
            battery_mv,
        })
    }

    /// Physical value in the sensor's native unit.
    pub fn value(&self) -> f64 {
        self.value_scaled as f64 / 100.0
    }
}

/// Fixed-point scaling for record values: x100, rounded half away from
/// zero. A 1e-6 nudge toward the rounding boundary absorbs binary
/// representation error of decimal inputs (10.005 * 100 = 1000.4999...).
pub fn scale_value(value: f64) -> i32 {
    let scaled = value * 100.0;
    (scaled + scaled.signum() * 1e-6).round() as i32
}

/// Content of file 0x41, 6 bytes on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub sensor_kind: SensorKind,
    pub sampling_interval_s: u32,
    pub resolution_bits: u8,
}

/// Wire size of a `NodeConfig`.
pub const CONFIG_LEN: usize = 6;

/// Smallest accepted sampling interval, seconds.
pub const MIN_SAMPLING_INTERVAL_S: u32 = 60;

impl NodeConfig {
    pub fn validate(&self) -> Result<(), AlpError> {
        if self.sampling_interval_s < MIN_SAMPLING_INTERVAL_S {
            return Err(AlpError::InvalidConfig(format!(
                "sampling_interval_s {} below minimum {MIN_SAMPLING_INTERVAL_S}",
                self.sampling_interval_s
            )));
        }
        if !(9..=12).contains(&self.resolution_bits) {
            return Err(AlpError::InvalidConfig(format!(
                "resolution_bits {} not in 9..=12",
                self.resolution_bits
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> [u8; CONFIG_LEN] {
        let mut out = [0u8; CONFIG_LEN];
        out[0] = self.sensor_kind.code();
        out[1..5].copy_from_slice(&self.sampling_interval_s.to_le_bytes());
        out[5] = self.resolution_bits;
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AlpError> {
        if bytes.len() != CONFIG_LEN {
            return Err(AlpError::LengthMismatch {
                declared: CONFIG_LEN,
                actual: bytes.len(),
            });
        }
        let sensor_kind = SensorKind::from_code(bytes[0]).ok_or(AlpError::InvalidConfig(
            format!("unknown sensor kind 0x{:02x}", bytes[0]),
        ))?;
        let cfg = NodeConfig {
            sensor_kind,
            sampling_interval_s: u32::from_le_bytes(bytes[1..5].try_into().unwrap()),
            resolution_bits: bytes[5],
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Builds the periodic uplink: a `ReturnFileData` on file 0x40 carrying
/// the 11-byte record serialization.
pub fn make_sensor_report(
    origin: NodeId,
    counter: u16,
    record: &SensorDataRecord,
) -> Result<AlpFrame, AlpError> {
    let payload = record.to_bytes().to_vec();
    Ok(AlpFrame {
        version: ALP_VERSION,
        origin,
        counter,
        op: AlpOp::ReturnFileData,
        file: FILE_SENSOR_DATA,
        offset: 0,
        length: payload.len() as u16,
        payload,
    })
}

/// Builds a configuration write: `WriteFileRequest` on file 0x41.
pub fn make_config_write(
    origin: NodeId,
    counter: u16,
    cfg: &NodeConfig,
) -> Result<AlpFrame, AlpError> {
    cfg.validate()?;
    let payload = cfg.to_bytes().to_vec();
    Ok(AlpFrame {
        version: ALP_VERSION,
        origin,
        counter,
        op: AlpOp::WriteFileRequest,
        file: FILE_CONFIG,
        offset: 0,
        length: payload.len() as u16,
        payload,
    })
}

/// Builds a file read: `ReadFileRequest` with an empty payload.
/// `length` 0 means "read the whole file from `offset`".
pub fn make_read_request(origin: NodeId, counter: u16, file: FileId) -> AlpFrame {
    AlpFrame {
        version: ALP_VERSION,
        origin,
        counter,
        op: AlpOp::ReadFileRequest,
        file,
        offset: 0,
        length: 0,
        payload: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_request_example() -> AlpFrame {
        make_read_request(NodeId(1), 0, FILE_SENSOR_DATA)
    }

    #[test]
    fn encode_read_request_layout() {
        let bytes = encode_frame(&read_request_example()).unwrap();
        assert_eq!(bytes.len(), 19);
        assert_eq!(bytes[11], 0x00); // op
        assert_eq!(bytes[12], 0x40); // file
    }

    #[test]
    fn header_crc_matches_independent_reference() {
        // Frozen from a table-driven CRC-16/CCITT-FALSE reference run over
        // the 17 header bytes of the read-request example.
        let bytes = encode_frame(&read_request_example()).unwrap();
        assert_eq!(crc16_ccitt_false(&bytes[..HEADER_LEN]), 0x6E42);
    }

    #[test]
    fn crc_check_values() {
        // Standard check value for CRC-16/CCITT-FALSE.
        assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
        assert_eq!(crc16_ccitt_false(b""), 0xFFFF);
    }

    #[test]
    fn roundtrip_simple() {
        let f = read_request_example();
        assert_eq!(decode_frame(&encode_frame(&f).unwrap()).unwrap(), f);
    }

    #[test]
    fn payload_byte_flip_detected() {
        let rec = SensorDataRecord {
            timestamp: 12,
            sensor_kind: SensorKind::SoilTemp,
            value_scaled: 737,
            battery_mv: 3600,
        };
        let frame = make_sensor_report(NodeId(9), 3, &rec).unwrap();
        let good = encode_frame(&frame).unwrap();
        for i in 0..good.len() - 2 {
            let mut bad = good.clone();
            bad[i] ^= 0xFF;
            assert_eq!(decode_frame(&bad), Err(AlpError::BadCrc), "byte {i}");
        }
    }

    #[test]
    fn short_input_rejected() {
        for len in 0..MIN_FRAME_LEN {
            assert_eq!(decode_frame(&vec![0u8; len]), Err(AlpError::TooShort(len)));
        }
    }

    #[test]
    fn payload_too_large_rejected() {
        let f = AlpFrame {
            version: ALP_VERSION,
            origin: NodeId(1),
            counter: 0,
            op: AlpOp::ReturnFileData,
            file: FILE_SENSOR_DATA,
            offset: 0,
            length: 240,
            payload: vec![0; 240],
        };
        assert_eq!(encode_frame(&f), Err(AlpError::PayloadTooLarge(240)));
    }

    #[test]
    fn length_mismatch_rejected() {
        let f = AlpFrame {
            version: ALP_VERSION,
            origin: NodeId(1),
            counter: 0,
            op: AlpOp::ReturnFileData,
            file: FILE_SENSOR_DATA,
            offset: 0,
            length: 5,
            payload: vec![1, 2],
        };
        assert!(matches!(
            encode_frame(&f),
            Err(AlpError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn sensor_report_example() {
        let rec = SensorDataRecord {
            timestamp: 0,
            sensor_kind: SensorKind::SoilTemp,
            value_scaled: 1000,
            battery_mv: 3600,
        };
        let frame = make_sensor_report(NodeId(42), 7, &rec).unwrap();
        assert_eq!(frame.payload.len(), 11);
        assert_eq!(encode_frame(&frame).unwrap().len(), 30);
    }

    #[test]
    fn scale_value_table() {
        // Hand-rounded, half away from zero at two decimals.
        let cases = [
            (10.00, 1000),
            (10.005, 1001),
            (10.004, 1000),
            (10.015, 1002),
            (-5.43, -543),
            (-10.005, -1001),
            (-10.004, -1000),
            (0.0, 0),
            (0.005, 1),
            (-0.005, -1),
            (0.004, 0),
            (-0.004, 0),
            (7.37, 737),
            (0.0625, 6),
            (0.125, 13),
            (-0.0625, -6),
            (99.999, 10000),
            (-99.999, -10000),
            (123.455, 12346),
            (-123.455, -12346),
        ];
        for (v, expected) in cases {
            assert_eq!(scale_value(v), expected, "value {v}");
        }
    }

    #[test]
    fn config_write_example() {
        let cfg = NodeConfig {
            sensor_kind: SensorKind::SoilTemp,
            sampling_interval_s: 900,
            resolution_bits: 12,
        };
        let frame = make_config_write(NodeId(5), 1, &cfg).unwrap();
        assert_eq!(frame.payload, vec![0x01, 0x84, 0x03, 0x00, 0x00, 0x0C]);
    }

    #[test]
    fn config_below_minimum_interval_rejected() {
        let cfg = NodeConfig {
            sensor_kind: SensorKind::SoilTemp,
            sampling_interval_s: 30,
            resolution_bits: 12,
        };
        assert!(matches!(
            make_config_write(NodeId(5), 1, &cfg),
            Err(AlpError::InvalidConfig(_))
        ));
    }

    #[test]
    fn unregistered_file_ids() {
        assert!(FILE_SENSOR_DATA.is_registered());
        assert!(FILE_CONFIG.is_registered());
        assert!(!FileId(0x07).is_registered());
    }

    #[test]
    fn golden_vectors() {
        let text = include_str!("../tests/vectors/golden_frames.txt");
        let mut checked = 0;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bytes: Vec<u8> = line
                .split_whitespace()
                .map(|h| u8::from_str_radix(h, 16).unwrap())
                .collect();
            let frame = decode_frame(&bytes).unwrap();
            assert_eq!(encode_frame(&frame).unwrap(), bytes);
            checked += 1;
        }
        assert_eq!(checked, 3);
    }
}
