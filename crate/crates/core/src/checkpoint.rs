//! Self-describing model container.
//!
//! ```text
//! POSE2IMU-CHECKPOINT 1\n
//! <header byte length>\n
//! <JSON header>
//! <parameter blocks, little-endian f32, declaration order>
//! <SHA-256 of everything above>
//! ```

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{TcnNetwork, Topology};

const MAGIC: &str = "POSE2IMU-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBlock {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header<M> {
    kind: String,
    topology: Topology,
    params: Vec<ParamBlock>,
    meta: M,
}

/// Serialises a network with model-specific metadata under `kind`.
pub fn encode<M: Serialize>(kind: &str, network: &TcnNetwork<f32>, meta: &M) -> Result<Vec<u8>> {
    let header = Header {
        kind: kind.to_string(),
        topology: network.topology.clone(),
        params: network
            .param_layout()
            .into_iter()
            .map(|(name, len)| ParamBlock { name, len })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = format!("{MAGIC} {FORMAT_VERSION}\n{}\n", json.len()).into_bytes();
    out.extend_from_slice(&json);
    for block in network.params() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("truncated preamble".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::Checkpoint("preamble is not utf-8".into()))
}

/// Verifies and decodes a container of the expected `kind`.
pub fn decode<M: DeserializeOwned>(kind: &str, bytes: &[u8]) -> Result<(TcnNetwork<f32>, M)> {
    if bytes.len() < 32 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut pos = 0;
    let magic = take_line(body, &mut pos)?;
    let version = magic
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| Error::Checkpoint("not a checkpoint".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let header_len: usize = take_line(body, &mut pos)?
        .parse()
        .map_err(|_| Error::Checkpoint("bad header length".into()))?;
    let header_end = pos
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| Error::Checkpoint("header runs past end of file".into()))?;
    let header: Header<M> =
        serde_json::from_slice(&body[pos..header_end]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.kind != kind {
        return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", header.kind)));
    }

    let mut network = TcnNetwork::<f32>::init(&header.topology, 0)?;
    let layout = network.param_layout();
    let declared: Vec<(String, usize)> = header.params.iter().map(|p| (p.name.clone(), p.len)).collect();
    if layout != declared {
        return Err(Error::Checkpoint("parameter layout does not match topology".into()));
    }
    let total: usize = layout.iter().map(|(_, n)| n).sum();
    let data = &body[header_end..];
    if data.len() != total * 4 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            total * 4,
            data.len()
        )));
    }
    let mut values = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for block in network.params_mut() {
        for slot in block.iter_mut() {
            *slot = values.next().expect("length checked");
        }
    }
    Ok((network, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Meta {
        note: String,
        value: f64,
    }

    fn sample() -> (TcnNetwork<f32>, Meta) {
        let topo = Topology {
            input_channels: 3,
            output_channels: 2,
            kernel_width: 3,
            widths: vec![4, 5],
            dilations: vec![1, 2],
            dropout: 0.1,
        };
        (
            TcnNetwork::init(&topo, 9).unwrap(),
            Meta {
                note: "x".into(),
                value: 0.1 + 0.2,
            },
        )
    }

    #[test]
    fn roundtrip_is_exact() {
        let (net, meta) = sample();
        let bytes = encode("test", &net, &meta).unwrap();
        let (back, m): (TcnNetwork<f32>, Meta) = decode("test", &bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(m, meta);
        assert_eq!(encode("test", &back, &m).unwrap(), bytes);
    }

    #[test]
    fn tampering_is_rejected() {
        let (net, meta) = sample();
        let bytes = encode("test", &net, &meta).unwrap();
        for i in [0, 25, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[i] ^= 1;
            assert!(matches!(decode::<Meta>("test", &bad), Err(Error::Checkpoint(_))));
        }
    }

    #[test]
    fn wrong_kind_and_unknown_fields_are_rejected() {
        let (net, meta) = sample();
        let bytes = encode("test", &net, &meta).unwrap();
        assert!(decode::<Meta>("other", &bytes).is_err());

        #[derive(Serialize)]
        struct Extra {
            note: String,
            value: f64,
            surprise: u8,
        }
        let extra = encode(
            "test",
            &net,
            &Extra {
                note: "x".into(),
                value: 1.0,
                surprise: 1,
            },
        )
        .unwrap();
        assert!(decode::<Meta>("test", &extra).is_err());
    }
}
