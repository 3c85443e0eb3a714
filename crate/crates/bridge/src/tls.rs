use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tokio_rustls::rustls::pki_types::{CertificateDer, PrivateKeyDer};
use tokio_rustls::rustls::ServerConfig;
use tokio_rustls::TlsAcceptor;

use crate::BridgeError;

/// PEM certificate chain and private key for serving TLS directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlsFiles {
    pub cert: PathBuf,
    pub key: PathBuf,
}

fn open(path: &Path) -> Result<BufReader<File>, BridgeError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| BridgeError::Tls(format!("{}: {e}", path.display())))
}

pub(crate) fn acceptor(files: &TlsFiles) -> Result<TlsAcceptor, BridgeError> {
    let certs: Vec<CertificateDer<'static>> = rustls_pemfile::certs(&mut open(&files.cert)?)
        .collect::<Result<_, _>>()
        .map_err(|e| BridgeError::Tls(format!("{}: {e}", files.cert.display())))?;
    if certs.is_empty() {
        return Err(BridgeError::Tls(format!(
            "{}: no certificates found",
            files.cert.display()
        )));
    }
    let key: PrivateKeyDer<'static> = rustls_pemfile::private_key(&mut open(&files.key)?)
        .map_err(|e| BridgeError::Tls(format!("{}: {e}", files.key.display())))?
        .ok_or_else(|| BridgeError::Tls(format!("{}: no private key found", files.key.display())))?;
    let config = ServerConfig::builder()
        .with_no_client_auth()
        .with_single_cert(certs, key)
        .map_err(|e| BridgeError::Tls(e.to_string()))?;
    Ok(TlsAcceptor::from(Arc::new(config)))
}
