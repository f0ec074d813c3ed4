//! Byte layouts for the layered relay circuit.
//!
//! A setup onion is built inside-out: the core, sealed to the provider, holds
//! the end-to-end session key and the requester's anonymous certificate;
//! every relay layer, sealed to that relay, names the next hop and carries a
//! hop key the relay uses to wrap the returning data.

use rand::RngCore;

use super::EntityId;
use crate::crypto::{open, seal, AnonymousCert, CryptoError, KeyPair, PublicKeys, SessionKey};

fn id_bytes(id: EntityId) -> [u8; 5] {
    let (tag, n) = match id {
        EntityId::RegistrationCa => (0, 0),
        EntityId::Merchant => (1, 0),
        EntityId::Monitor => (2, 0),
        EntityId::SuperPeer => (3, 0),
        EntityId::Judge => (4, 0),
        EntityId::Buyer(i) => (5, i),
        EntityId::Peer(i) => (6, i),
    };
    let mut out = [tag, 0, 0, 0, 0];
    out[1..].copy_from_slice(&n.to_le_bytes());
    out
}

fn id_from(bytes: &[u8]) -> Result<EntityId, CryptoError> {
    let n = u32::from_le_bytes(bytes[1..5].try_into().expect("4 bytes"));
    Ok(match bytes[0] {
        0 => EntityId::RegistrationCa,
        1 => EntityId::Merchant,
        2 => EntityId::Monitor,
        3 => EntityId::SuperPeer,
        4 => EntityId::Judge,
        5 => EntityId::Buyer(n),
        6 => EntityId::Peer(n),
        t => return Err(CryptoError::Malformed(format!("entity tag {t}"))),
    })
}

pub(crate) struct Layer {
    pub next: EntityId,
    pub hop_key: SessionKey,
    pub inner: Vec<u8>,
}

pub(crate) struct Core {
    pub session_key: SessionKey,
    pub cert: AnonymousCert,
}

fn cert_bytes(cert: &AnonymousCert) -> Vec<u8> {
    serde_json::to_vec(cert).expect("certificates serialise")
}

fn cert_from(bytes: &[u8]) -> Result<AnonymousCert, CryptoError> {
    serde_json::from_slice(bytes).map_err(|e| CryptoError::Malformed(e.to_string()))
}

const LAYER: u8 = b'L';
const CORE: u8 = b'C';

pub(crate) enum Opened {
    Layer(Layer),
    Core(Core),
}

pub(crate) fn seal_core(core: &Core, provider: &PublicKeys, rng: &mut impl RngCore) -> Result<Vec<u8>, CryptoError> {
    let mut pt = vec![CORE];
    pt.extend_from_slice(&core.session_key.to_bytes());
    pt.extend(cert_bytes(&core.cert));
    seal(&pt, provider, rng)
}

/// Peels one layer addressed to `keys`.
pub(crate) fn open_circuit(ct: &[u8], keys: &KeyPair) -> Result<Opened, CryptoError> {
    let pt = open(ct, keys)?;
    match pt.first() {
        Some(&LAYER) => Ok(Opened::Layer(parse_layer(&pt[1..])?)),
        Some(&CORE) => Ok(Opened::Core(parse_core(&pt[1..])?)),
        _ => Err(CryptoError::Malformed("unknown circuit layer".into())),
    }
}

fn parse_core(pt: &[u8]) -> Result<Core, CryptoError> {
    if pt.len() < 16 {
        return Err(CryptoError::Malformed("circuit core truncated".into()));
    }
    Ok(Core {
        session_key: SessionKey::from_bytes(pt[..16].try_into().expect("16 bytes")),
        cert: cert_from(&pt[16..])?,
    })
}

pub(crate) fn seal_layer(layer: &Layer, relay: &PublicKeys, rng: &mut impl RngCore) -> Result<Vec<u8>, CryptoError> {
    let mut pt = vec![LAYER];
    pt.extend_from_slice(&id_bytes(layer.next));
    pt.extend_from_slice(&layer.hop_key.to_bytes());
    pt.extend_from_slice(&layer.inner);
    seal(&pt, relay, rng)
}

fn parse_layer(pt: &[u8]) -> Result<Layer, CryptoError> {
    if pt.len() < 21 {
        return Err(CryptoError::Malformed("relay layer truncated".into()));
    }
    Ok(Layer {
        next: id_from(&pt[..5])?,
        hop_key: SessionKey::from_bytes(pt[5..21].try_into().expect("16 bytes")),
        inner: pt[21..].to_vec(),
    })
}

/// Provider reply before encryption: `len ‖ cert ‖ file`.
pub(crate) fn reply_plaintext(cert: &AnonymousCert, file: &[u8]) -> Vec<u8> {
    let c = cert_bytes(cert);
    let mut out = (c.len() as u32).to_le_bytes().to_vec();
    out.extend(c);
    out.extend_from_slice(file);
    out
}

pub(crate) fn split_reply(pt: &[u8]) -> Result<(AnonymousCert, Vec<u8>), CryptoError> {
    if pt.len() < 4 {
        return Err(CryptoError::Malformed("reply truncated".into()));
    }
    let n = u32::from_le_bytes(pt[..4].try_into().expect("4 bytes")) as usize;
    if pt.len() < 4 + n {
        return Err(CryptoError::Malformed("reply truncated".into()));
    }
    Ok((cert_from(&pt[4..4 + n])?, pt[4 + n..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{make_pseudonym, PseudonymSecret};
    use crate::rng::seeded;

    #[test]
    fn layers_round_trip() {
        let mut rng = seeded(3);
        let relay = KeyPair::generate(&mut rng);
        let layer = Layer {
            next: EntityId::Peer(9),
            hop_key: SessionKey::generate(&mut rng),
            inner: vec![1, 2, 3],
        };
        let ct = seal_layer(&layer, &relay.public(), &mut rng).unwrap();
        let Opened::Layer(back) = open_circuit(&ct, &relay).unwrap() else {
            panic!("expected a relay layer")
        };
        assert_eq!(back.next, EntityId::Peer(9));
        assert_eq!(back.hop_key, layer.hop_key);
        assert_eq!(back.inner, vec![1, 2, 3]);
        let other = KeyPair::generate(&mut rng);
        assert!(open_circuit(&ct, &other).is_err());
    }

    #[test]
    fn core_and_reply_round_trip() {
        let mut rng = seeded(4);
        let ca = KeyPair::generate(&mut rng);
        let provider = KeyPair::generate(&mut rng);
        let p = make_pseudonym(b"x", &PseudonymSecret::generate(&mut rng)).unwrap();
        let cert = AnonymousCert::issue(provider.public(), p, "ca_r", 10, &ca);
        let core = Core {
            session_key: SessionKey::generate(&mut rng),
            cert: cert.clone(),
        };
        let ct = seal_core(&core, &provider.public(), &mut rng).unwrap();
        let Opened::Core(back) = open_circuit(&ct, &provider).unwrap() else {
            panic!("expected the core")
        };
        assert_eq!(back.cert, cert);
        let (c, file) = split_reply(&reply_plaintext(&cert, b"")).unwrap();
        assert_eq!(c, cert);
        assert!(file.is_empty());
    }
}
