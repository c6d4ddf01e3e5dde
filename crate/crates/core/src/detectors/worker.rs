use std::sync::mpsc::{self, Receiver, SyncSender, TryRecvError};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use super::{detect, Detector, DetectorError, DetectorRequest, DetectorResponse, LatencyModel};

/// Detector running on its own thread behind single-slot request and
/// response channels.
pub struct DetectorWorker {
    requests: Option<SyncSender<DetectorRequest>>,
    responses: Option<Receiver<DetectorResponse>>,
    handle: Option<JoinHandle<()>>,
}

impl DetectorWorker {
    pub fn spawn(mut detector: Box<dyn Detector>, latency: LatencyModel) -> Self {
        let (req_tx, req_rx) = mpsc::sync_channel::<DetectorRequest>(1);
        let (resp_tx, resp_rx) = mpsc::sync_channel::<DetectorResponse>(1);
        let handle = thread::Builder::new()
            .name("detector".into())
            .spawn(move || {
                for (n, req) in req_rx.iter().enumerate() {
                    let start = Instant::now();
                    let mut resp = detect(detector.as_mut(), req);
                    // Simulated delay is applied on delivery, counted from accept.
                    let due = start + latency.wall_delay(n);
                    let now = Instant::now();
                    if due > now {
                        thread::sleep(due - now);
                    }
                    resp.latency = start.elapsed();
                    if resp_tx.send(resp).is_err() {
                        break;
                    }
                }
            })
            .expect("failed to spawn detector thread");
        Self {
            requests: Some(req_tx),
            responses: Some(resp_rx),
            handle: Some(handle),
        }
    }

    pub fn submit(&self, req: DetectorRequest) -> Result<(), DetectorError> {
        self.requests
            .as_ref()
            .ok_or(DetectorError::Disconnected)?
            .send(req)
            .map_err(|_| DetectorError::Disconnected)
    }

    /// Non-blocking poll.
    pub fn try_recv(&self) -> Result<Option<DetectorResponse>, DetectorError> {
        let rx = self.responses.as_ref().ok_or(DetectorError::Disconnected)?;
        match rx.try_recv() {
            Ok(r) => Ok(Some(r)),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(DetectorError::Disconnected),
        }
    }

    pub fn recv(&self) -> Result<DetectorResponse, DetectorError> {
        self.responses
            .as_ref()
            .ok_or(DetectorError::Disconnected)?
            .recv()
            .map_err(|_| DetectorError::Disconnected)
    }
}

impl Drop for DetectorWorker {
    fn drop(&mut self) {
        self.requests.take();
        // Closing the response side makes a blocked send fail instead of hanging.
        self.responses.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
