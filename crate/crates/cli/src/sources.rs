//! Sensor input resolution: file, stdin, or a one-shot TCP listener.

use std::io::BufReader;
use std::net::TcpListener;
use std::path::Path;

use tenshape_core::sensing::{parse_sensor_stream, SensorStream};

use crate::error::CliError;

/// Load the full sensor stream named by `--sensors`. `-` reads stdin;
/// `tcp:PORT` listens on localhost, accepts one connection, and reads it to
/// end of stream; anything else is a file path.
pub fn load_sensor_stream(arg: &str) -> Result<SensorStream, CliError> {
    if arg == "-" {
        let stdin = std::io::stdin();
        return parse_sensor_stream(stdin.lock())
            .map_err(|e| CliError::Io(format!("stdin sensor stream: {e}")));
    }
    if let Some(port) = arg.strip_prefix("tcp:") {
        let port: u16 = port
            .parse()
            .map_err(|_| CliError::Config(format!("bad sensor port in {arg:?}")))?;
        let listener = TcpListener::bind(("127.0.0.1", port))
            .map_err(|e| CliError::Io(format!("cannot listen on 127.0.0.1:{port}: {e}")))?;
        eprintln!("waiting for one sensor connection on 127.0.0.1:{port}");
        let (conn, peer) = listener
            .accept()
            .map_err(|e| CliError::Io(format!("accept on port {port}: {e}")))?;
        eprintln!("reading sensor stream from {peer}");
        return parse_sensor_stream(BufReader::new(conn))
            .map_err(|e| CliError::Io(format!("tcp sensor stream: {e}")));
    }
    let path = Path::new(arg);
    let file = std::fs::File::open(path).map_err(|e| CliError::io_at(path, e))?;
    parse_sensor_stream(BufReader::new(file))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
