//! Read-only static file host for envelopes and metafiles.
//!
//! Holds no keys. Serves `GET`/`HEAD` only; any request path that would
//! climb out of the root is answered with 403.

use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use percent_encoding::percent_decode_str;

#[derive(Debug, Clone)]
pub struct HostConfig {
    pub root_dir: PathBuf,
    pub listen_addr: String,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Resolved {
    File(PathBuf),
    Forbidden,
    NotFound,
}

/// Maps a raw request path onto a file under `root`.
///
/// `root` must already be canonical. Segments are percent-decoded and `..`
/// pops a segment; popping past the root, or a symlink leading outside it,
/// is forbidden.
pub fn resolve(root: &Path, raw_path: &str) -> Resolved {
    let mut parts: Vec<String> = Vec::new();
    for seg in raw_path.split('/') {
        let Ok(seg) = percent_decode_str(seg).decode_utf8() else {
            return Resolved::Forbidden;
        };
        if seg.contains(['/', '\\', '\0']) {
            return Resolved::Forbidden;
        }
        match seg.as_ref() {
            "" | "." => {}
            ".." => {
                if parts.pop().is_none() {
                    return Resolved::Forbidden;
                }
            }
            s => parts.push(s.to_owned()),
        }
    }
    if parts.is_empty() {
        return Resolved::NotFound;
    }
    let candidate: PathBuf = parts.iter().fold(root.to_path_buf(), |p, s| p.join(s));
    match candidate.canonicalize() {
        Ok(real) if !real.starts_with(root) => Resolved::Forbidden,
        Ok(real) if real.is_file() => Resolved::File(real),
        _ => Resolved::NotFound,
    }
}

fn plain(status: StatusCode) -> Response {
    (status, status.canonical_reason().unwrap_or_default()).into_response()
}

async fn serve_file(State(root): State<Arc<PathBuf>>, req: Request) -> Response {
    let method = req.method().clone();
    if method != Method::GET && method != Method::HEAD {
        let mut resp = plain(StatusCode::METHOD_NOT_ALLOWED);
        resp.headers_mut()
            .insert(header::ALLOW, header::HeaderValue::from_static("GET, HEAD"));
        return resp;
    }
    let path = match resolve(&root, req.uri().path()) {
        Resolved::File(p) => p,
        Resolved::Forbidden => return plain(StatusCode::FORBIDDEN),
        Resolved::NotFound => return plain(StatusCode::NOT_FOUND),
    };
    let bytes = match tokio::fs::read(&path).await {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return plain(StatusCode::NOT_FOUND),
        Err(_) => return plain(StatusCode::INTERNAL_SERVER_ERROR),
    };
    let len = bytes.len();
    let body = if method == Method::HEAD {
        Body::empty()
    } else {
        Body::from(bytes)
    };
    Response::builder()
        .status(StatusCode::OK)
        .header(header::CONTENT_TYPE, "application/octet-stream")
        .header(header::CONTENT_LENGTH, len)
        .body(body)
        .expect("static response builds")
}

pub fn host_router(root_dir: &Path) -> io::Result<Router> {
    let root = root_dir.canonicalize()?;
    if !root.is_dir() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{} is not a directory", root.display()),
        ));
    }
    Ok(Router::new().fallback(serve_file).with_state(Arc::new(root)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().canonicalize().unwrap();
        std::fs::create_dir(root.join("sub")).unwrap();
        std::fs::write(root.join("a.enc"), b"x").unwrap();
        std::fs::write(root.join("sub/b c.enc"), b"y").unwrap();

        assert_eq!(resolve(&root, "/a.enc"), Resolved::File(root.join("a.enc")));
        assert_eq!(
            resolve(&root, "/sub/b%20c.enc"),
            Resolved::File(root.join("sub/b c.enc"))
        );
        assert_eq!(resolve(&root, "/sub/../a.enc"), Resolved::File(root.join("a.enc")));
        assert_eq!(resolve(&root, "/../secret"), Resolved::Forbidden);
        assert_eq!(resolve(&root, "/%2e%2e/secret"), Resolved::Forbidden);
        assert_eq!(resolve(&root, "/sub/..%2f..%2fetc"), Resolved::Forbidden);
        assert_eq!(resolve(&root, "/sub"), Resolved::NotFound);
        assert_eq!(resolve(&root, "/"), Resolved::NotFound);
        assert_eq!(resolve(&root, "/missing"), Resolved::NotFound);
    }

    #[test]
    fn symlink_escape_is_forbidden() {
        let outside = tempfile::tempdir().unwrap();
        std::fs::write(outside.path().join("secret"), b"s").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().canonicalize().unwrap();
        std::os::unix::fs::symlink(outside.path().join("secret"), root.join("link")).unwrap();
        assert_eq!(resolve(&root, "/link"), Resolved::Forbidden);
    }
}
