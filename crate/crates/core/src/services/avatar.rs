//! Fixed-size avatar pose: head and both hands, position plus rotation.

use serde::{Deserialize, Serialize};

/// Bytes in an encoded [`AvatarPose`].
pub const POSE_BYTES: usize = 84;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub position: [f32; 3],
    pub rotation: [f32; 4],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AvatarPose {
    pub head: Transform,
    pub left: Transform,
    pub right: Transform,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("pose payload must be {POSE_BYTES} bytes, got {0}")]
pub struct PoseLengthError(pub usize);

impl AvatarPose {
    /// Little-endian: for each of head, left, right, 3 position floats then 4 rotation floats.
    pub fn encode(&self) -> [u8; POSE_BYTES] {
        let mut out = [0u8; POSE_BYTES];
        let floats = [self.head, self.left, self.right].into_iter().flat_map(|t| t.position.into_iter().chain(t.rotation));
        for (chunk, f) in out.chunks_exact_mut(4).zip(floats) {
            chunk.copy_from_slice(&f.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PoseLengthError> {
        if bytes.len() != POSE_BYTES {
            return Err(PoseLengthError(bytes.len()));
        }
        let f: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = |i: usize| Transform { position: [f[i], f[i + 1], f[i + 2]], rotation: [f[i + 3], f[i + 4], f[i + 5], f[i + 6]] };
        Ok(Self { head: t(0), left: t(7), right: t(14) })
    }

    /// A plausible standing pose that drifts with `phase`, for bots.
    pub fn synthetic(phase: f32) -> Self {
        let identity = [0.0, 0.0, 0.0, 1.0];
        let (s, c) = phase.sin_cos();
        Self {
            head: Transform { position: [0.1 * s, 1.7, 0.1 * c], rotation: identity },
            left: Transform { position: [-0.3, 1.2 + 0.05 * s, 0.2], rotation: identity },
            right: Transform { position: [0.3, 1.2 + 0.05 * c, 0.2], rotation: identity },
        }
    }
}
