//! In-process simulation of the vertical federated protocol.
//!
//! Clients and the server exchange [`Message`]s through a [`Federation`],
//! which either hands messages over in memory or round-trips them through
//! the wire codec. Raw data never enters a message: the variants only carry
//! ranks, latents, embeddings and solver state.

use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rank::PerturbedRanks;

pub const WIRE_VERSION: u32 = 1;
/// Largest accepted frame payload.
pub const MAX_FRAME: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FederationError {
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: u64, have: u64 },
    #[error("frame length {0} exceeds limit")]
    TooLarge(u64),
    #[error("undecodable payload: {0}")]
    Decode(String),
    #[error("unsupported wire version {0}")]
    Version(u32),
    #[error("client {client} failed: {reason}")]
    ClientFailed { client: usize, reason: String },
    #[error("unknown transport `{0}` (expected memory or loopback)")]
    UnknownTransport(String),
}

mod text_real {
    /// 17 significant digits, which `str::parse` maps back to the same bits.
    pub fn encode(v: f64) -> String {
        format!("{v:.16e}")
    }

    pub fn decode<E: serde::de::Error>(s: &str) -> Result<f64, E> {
        s.parse::<f64>()
            .map_err(|_| E::custom(format!("bad real `{s}`")))
    }
}

mod text_reals {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&super::text_real::encode(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| super::text_real::decode(s))
            .collect()
    }
}

mod text_reals_nested {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for inner in v {
            let strs: Vec<String> = inner.iter().map(|x| super::text_real::encode(*x)).collect();
            seq.serialize_element(&strs)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        Vec::<Vec<String>>::deserialize(d)?
            .iter()
            .map(|inner| inner.iter().map(|s| super::text_real::decode(s)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Message {
    /// Released ranks of some of a client's variables.
    RankShare {
        client: usize,
        variables: Vec<usize>,
        rows: Vec<Vec<usize>>,
        #[serde(with = "text_reals_nested")]
        ranks: Vec<Vec<f64>>,
        #[serde(with = "text_reals")]
        theta: Vec<f64>,
        debiased: bool,
    },
    /// Column-major latent submatrix for a client's variables.
    LatentBlock {
        client: usize,
        columns: Vec<usize>,
        n_rows: usize,
        #[serde(with = "text_reals")]
        values: Vec<f64>,
    },
    /// A client's linear predictor contribution `X_k beta_k`.
    EmbeddingShare {
        client: usize,
        #[serde(with = "text_reals")]
        zeta: Vec<f64>,
    },
    /// Server state broadcast to every client during ADMM.
    BroadcastState {
        #[serde(with = "text_reals")]
        h: Vec<f64>,
        #[serde(with = "text_reals")]
        gamma: Vec<f64>,
    },
    /// Announces the copula dimension without revealing the matrix.
    OmegaNotice { dim: usize },
    Control { round: u64, phase: u32 },
}

impl Message {
    pub fn rank_share(client: usize, variables: Vec<usize>, ranks: &[PerturbedRanks]) -> Self {
        Message::RankShare {
            client,
            variables,
            rows: ranks.iter().map(|r| r.rows.clone()).collect(),
            ranks: ranks.iter().map(|r| r.values.clone()).collect(),
            theta: ranks.iter().map(|r| r.theta).collect(),
            debiased: ranks.iter().all(|r| r.debiased),
        }
    }

    /// Numeric payload vectors carried by the message.
    pub fn payloads(&self) -> Vec<&[f64]> {
        match self {
            Message::RankShare { ranks, theta, .. } => {
                let mut v: Vec<&[f64]> = ranks.iter().map(|r| r.as_slice()).collect();
                v.push(theta);
                v
            }
            Message::LatentBlock { values, n_rows, .. } => {
                if *n_rows == 0 {
                    vec![values.as_slice()]
                } else {
                    values.chunks(*n_rows).collect()
                }
            }
            Message::EmbeddingShare { zeta, .. } => vec![zeta],
            Message::BroadcastState { h, gamma } => vec![h, gamma],
            Message::OmegaNotice { .. } | Message::Control { .. } => Vec::new(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Message::RankShare { .. } => "RankShare",
            Message::LatentBlock { .. } => "LatentBlock",
            Message::EmbeddingShare { .. } => "EmbeddingShare",
            Message::BroadcastState { .. } => "BroadcastState",
            Message::OmegaNotice { .. } => "OmegaNotice",
            Message::Control { .. } => "Control",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    v: u32,
    #[serde(flatten)]
    msg: Message,
}

/// Length-prefixed frame: 4-byte big-endian length, then a JSON payload.
pub fn wire_encode(msg: &Message) -> Vec<u8> {
    let body = serde_json::to_vec(&Envelope {
        v: WIRE_VERSION,
        msg: msg.clone(),
    })
    .expect("messages always serialize");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decodes one frame, returning the message and the bytes consumed.
pub fn wire_decode(bytes: &[u8]) -> Result<(Message, usize), FederationError> {
    if bytes.len() < 4 {
        return Err(FederationError::Truncated {
            needed: 4,
            have: bytes.len() as u64,
        });
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as u64;
    if len > MAX_FRAME {
        return Err(FederationError::TooLarge(len));
    }
    let have = bytes.len() as u64 - 4;
    if have < len {
        return Err(FederationError::Truncated {
            needed: len,
            have,
        });
    }
    let body = &bytes[4..4 + len as usize];
    let env: Envelope =
        serde_json::from_slice(body).map_err(|e| FederationError::Decode(e.to_string()))?;
    if env.v != WIRE_VERSION {
        return Err(FederationError::Version(env.v));
    }
    Ok((env.msg, 4 + len as usize))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TransportKind {
    #[default]
    Memory,
    Loopback,
}

impl TransportKind {
    /// Reads `FED_TRANSPORT` (`memory` or `loopback`), defaulting to memory.
    pub fn from_env() -> Result<Self, FederationError> {
        match std::env::var("FED_TRANSPORT") {
            Err(_) => Ok(TransportKind::Memory),
            Ok(v) => v.parse(),
        }
    }
}

impl std::str::FromStr for TransportKind {
    type Err = FederationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "memory" | "" => Ok(TransportKind::Memory),
            "loopback" => Ok(TransportKind::Loopback),
            other => Err(FederationError::UnknownTransport(other.to_string())),
        }
    }
}

/// Message substrate shared by the server and all clients.
#[derive(Debug, Default)]
pub struct Federation {
    pub transport: TransportKind,
    transcript: Option<Mutex<Vec<Message>>>,
    frames: Mutex<(u64, u64)>,
}

impl Federation {
    pub fn new(transport: TransportKind) -> Self {
        Federation {
            transport,
            transcript: None,
            frames: Mutex::new((0, 0)),
        }
    }

    /// Keeps a copy of every delivered message for later inspection.
    pub fn with_transcript(mut self) -> Self {
        self.transcript = Some(Mutex::new(Vec::new()));
        self
    }

    /// Delivers one message and returns what the receiver sees.
    pub fn send(&self, msg: Message) -> Result<Message, FederationError> {
        let delivered = match self.transport {
            TransportKind::Memory => msg,
            TransportKind::Loopback => {
                let bytes = wire_encode(&msg);
                self.frames.lock().unwrap().1 += bytes.len() as u64;
                wire_decode(&bytes)?.0
            }
        };
        self.frames.lock().unwrap().0 += 1;
        if let Some(t) = &self.transcript {
            t.lock().unwrap().push(delivered.clone());
        }
        Ok(delivered)
    }

    /// Delivered message count and wire bytes (loopback only).
    pub fn traffic(&self) -> (u64, u64) {
        *self.frames.lock().unwrap()
    }

    pub fn transcript(&self) -> Vec<Message> {
        self.transcript
            .as_ref()
            .map(|t| t.lock().unwrap().clone())
            .unwrap_or_default()
    }

    /// Runs every client step, delivers their messages, then hands the
    /// per-client inboxes (in client order) to the server step.
    pub fn run_round<C, S, T>(&self, n_clients: usize, client_step: C, server_step: S) -> crate::Result<T>
    where
        C: Fn(usize) -> crate::Result<Vec<Message>> + Sync,
        S: FnOnce(Vec<Vec<Message>>) -> crate::Result<T>,
    {
        let outboxes: Vec<crate::Result<Vec<Message>>> =
            (0..n_clients).into_par_iter().map(&client_step).collect();
        let mut inbox = Vec::with_capacity(n_clients);
        for (client, out) in outboxes.into_iter().enumerate() {
            let msgs = out.map_err(|e| FederationError::ClientFailed {
                client,
                reason: e.to_string(),
            })?;
            inbox.push(
                msgs.into_iter()
                    .map(|m| self.send(m))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        server_step(inbox)
    }
}

/// Indices of transcript messages with a payload equal, as a multiset, to
/// one of `columns`.
pub fn scan_for_raw_columns(transcript: &[Message], columns: &[Vec<f64>]) -> Vec<(usize, &'static str)> {
    let sorted_cols: Vec<Vec<u64>> = columns
        .iter()
        .map(|c| {
            let mut v: Vec<u64> = c.iter().map(|x| x.to_bits()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let mut hits = Vec::new();
    for (i, m) in transcript.iter().enumerate() {
        for p in m.payloads() {
            let mut bits: Vec<u64> = p.iter().map(|x| x.to_bits()).collect();
            bits.sort_unstable();
            if sorted_cols.iter().any(|c| !c.is_empty() && *c == bits) {
                hits.push((i, m.kind()));
            }
        }
    }
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::numeric::{std_normal, substream};
    use proptest::prelude::*;

    #[test]
    fn control_round_trips() {
        let m = Message::Control { round: 0, phase: 0 };
        let bytes = wire_encode(&m);
        assert_eq!(wire_decode(&bytes).unwrap(), (m, bytes.len()));
    }

    #[test]
    fn oversized_length_rejected() {
        let mut bytes = (1u32 << 31).to_be_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        assert_eq!(wire_decode(&bytes), Err(FederationError::TooLarge(1 << 31)));
    }

    #[test]
    fn truncated_and_unknown_rejected() {
        let bytes = wire_encode(&Message::OmegaNotice { dim: 3 });
        assert!(matches!(
            wire_decode(&bytes[..bytes.len() - 1]),
            Err(FederationError::Truncated { .. })
        ));
        assert!(matches!(wire_decode(&bytes[..2]), Err(FederationError::Truncated { .. })));
        let body = br#"{"v":1,"kind":"RawColumn","values":["1"]}"#;
        let mut frame = (body.len() as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(body);
        assert!(matches!(wire_decode(&frame), Err(FederationError::Decode(_))));
        let body = br#"{"v":2,"kind":"OmegaNotice","dim":3}"#;
        let mut frame = (body.len() as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(body);
        assert_eq!(wire_decode(&frame), Err(FederationError::Version(2)));
    }

    #[test]
    fn large_rank_share_is_bit_exact() {
        let mut rng = substream(1, &[]);
        let ranks = PerturbedRanks {
            rows: (0..10_000).collect(),
            values: (0..10_000).map(|_| std_normal(&mut rng) * 1e3).collect(),
            theta: 0.268_941_421_369_995_1,
            debiased: true,
        };
        let m = Message::rank_share(2, vec![5], &[ranks]);
        let (back, _) = wire_decode(&wire_encode(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn round_delivers_every_client_message() {
        for kind in [TransportKind::Memory, TransportKind::Loopback] {
            let fed = Federation::new(kind);
            let got = fed
                .run_round(
                    3,
                    |k| {
                        Ok(vec![Message::rank_share(
                            k,
                            vec![k],
                            &[PerturbedRanks {
                                rows: vec![0, 1],
                                values: vec![1.0, 2.0 + k as f64],
                                theta: 0.1,
                                debiased: true,
                            }],
                        )])
                    },
                    |inbox| Ok(inbox.into_iter().flatten().collect::<Vec<_>>()),
                )
                .unwrap();
            assert_eq!(got.len(), 3);
        }
    }

    #[test]
    fn echo_round_single_client() {
        let fed = Federation::new(TransportKind::Loopback);
        let m = Message::EmbeddingShare {
            client: 0,
            zeta: vec![0.1, -2.5e-300, 7.0],
        };
        let out = fed
            .run_round(1, |_| Ok(vec![m.clone()]), |mut inbox| Ok(inbox.remove(0).remove(0)))
            .unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn failing_client_is_named() {
        let fed = Federation::new(TransportKind::Memory);
        let err = fed
            .run_round(
                4,
                |k| {
                    if k == 2 {
                        Err(Error::InvalidArgument("boom".into()))
                    } else {
                        Ok(vec![])
                    }
                },
                |_| Ok(()),
            )
            .unwrap_err();
        assert!(matches!(
            err,
            Error::Federation(FederationError::ClientFailed { client: 2, .. })
        ));
    }

    #[test]
    fn transport_parsing() {
        assert_eq!("memory".parse::<TransportKind>().unwrap(), TransportKind::Memory);
        assert_eq!("loopback".parse::<TransportKind>().unwrap(), TransportKind::Loopback);
        assert!("tcp".parse::<TransportKind>().is_err());
    }

    #[test]
    fn scanner_finds_planted_column() {
        let col = vec![3.0, 1.0, 2.0];
        let msgs = vec![
            Message::EmbeddingShare {
                client: 0,
                zeta: vec![1.0, 2.0, 4.0],
            },
            Message::BroadcastState {
                h: vec![2.0, 3.0, 1.0],
                gamma: vec![0.0; 3],
            },
        ];
        assert_eq!(scan_for_raw_columns(&msgs, &[col]), vec![(1, "BroadcastState")]);
    }

    fn arb_real() -> impl Strategy<Value = f64> {
        prop_oneof![
            any::<f64>().prop_filter("finite", |x| x.is_finite()),
            Just(f64::INFINITY),
            Just(f64::NEG_INFINITY),
            Just(-0.0),
            Just(f64::MIN_POSITIVE / 8.0),
        ]
    }

    proptest! {
        #[test]
        fn embedding_round_trip(zeta in prop::collection::vec(arb_real(), 0..64), client in 0usize..16) {
            let m = Message::EmbeddingShare { client, zeta };
            let bytes = wire_encode(&m);
            let (back, used) = wire_decode(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            match (&back, &m) {
                (Message::EmbeddingShare { zeta: a, .. }, Message::EmbeddingShare { zeta: b, .. }) => {
                    prop_assert_eq!(
                        a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                        b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
                    );
                }
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = wire_decode(&bytes);
        }
    }
}
