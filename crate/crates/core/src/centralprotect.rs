//! Server-side sanitisation of single user rows after training.
//!
//! When a user marks an attribute private after the fact, the server runs
//! gradient descent on that user's embedding row alone against the frozen
//! filter's KL-to-uniform loss. Nothing else in the model changes.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::filters::{privacy_gradient, privacy_loss, AttributeFilter};
use crate::numeric::{axpy, l2_norm};
use crate::recmodel::RecModel;

pub const DEFAULT_CAP: usize = 100;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_PROTECT_LR: f64 = 0.01;
/// Backtracking gives up once the step falls below this.
pub const MIN_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtectRequest {
    pub user: usize,
    pub attribute: usize,
    /// Maximum number of descent iterations.
    pub cap: usize,
    /// Stop once the privacy loss is below this.
    pub tolerance: f64,
}

impl ProtectRequest {
    pub fn new(user: usize, attribute: usize) -> Self {
        ProtectRequest { user, attribute, cap: DEFAULT_CAP, tolerance: DEFAULT_TOLERANCE }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Tolerance,
    Cap,
    /// Backtracking could not find a non-increasing step.
    Stalled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtectTrace {
    pub request: ProtectRequest,
    /// Privacy loss before the first iteration and after each accepted one.
    pub losses: Vec<f64>,
    /// Step size used by each accepted iteration.
    pub steps: Vec<f64>,
    /// `‖e_u(final) − e_u(initial)‖`.
    pub displacement: f64,
    pub stop: StopReason,
}

impl ProtectTrace {
    pub fn iterations(&self) -> usize {
        self.losses.len() - 1
    }

    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace holds the initial loss")
    }
}

fn check(model: &RecModel, filters: &[AttributeFilter], req: &ProtectRequest) -> Result<()> {
    if req.user >= model.num_users() {
        return Err(Error::Index(format!("user {} out of range ({} users)", req.user, model.num_users())));
    }
    if req.attribute >= filters.len() {
        return Err(Error::state(format!("no filter for attribute {}", req.attribute)));
    }
    if !(req.tolerance >= 0.0) {
        return Err(Error::param(format!("tolerance must be >= 0, got {}", req.tolerance)));
    }
    Ok(())
}

/// Descend `privacy_loss(filter, e_u)` in `e_u` only, halving the step
/// whenever it would increase the loss.
pub fn central_protect(
    model: &mut RecModel,
    filters: &[AttributeFilter],
    req: &ProtectRequest,
    lr: f64,
) -> Result<ProtectTrace> {
    check(model, filters, req)?;
    if !(lr > 0.0) {
        return Err(Error::param(format!("lr must be positive, got {lr}")));
    }
    let filter = &filters[req.attribute];
    let start = model.user(req.user).to_vec();
    let mut e = start.clone();
    let mut loss = privacy_loss(filter, &e)?;
    let mut trace = ProtectTrace {
        request: *req,
        losses: vec![loss],
        steps: Vec::new(),
        displacement: 0.0,
        stop: StopReason::Cap,
    };
    let mut step = lr;
    loop {
        if loss < req.tolerance {
            trace.stop = StopReason::Tolerance;
            break;
        }
        if trace.iterations() >= req.cap {
            trace.stop = StopReason::Cap;
            break;
        }
        let g = privacy_gradient(filter, &e)?;
        let accepted = loop {
            let mut cand = e.clone();
            axpy(-step, &g, &mut cand);
            let l = privacy_loss(filter, &cand)?;
            if l <= loss {
                break Some((cand, l));
            }
            step /= 2.0;
            if step < MIN_STEP {
                break None;
            }
        };
        match accepted {
            Some((cand, l)) => {
                e = cand;
                loss = l;
                trace.losses.push(l);
                trace.steps.push(step);
            }
            None => {
                trace.stop = StopReason::Stalled;
                break;
            }
        }
    }
    trace.displacement = l2_norm(&e.iter().zip(&start).map(|(a, b)| a - b).collect::<Vec<_>>());
    model.user_mut(req.user).copy_from_slice(&e);
    Ok(trace)
}

/// Apply requests in order. Requests for the same user see the effect of
/// earlier ones.
pub fn protect_all(
    model: &mut RecModel,
    filters: &[AttributeFilter],
    requests: &[ProtectRequest],
    lr: f64,
) -> Result<Vec<ProtectTrace>> {
    for r in requests {
        check(model, filters, r)?;
    }
    requests.iter().map(|r| central_protect(model, filters, r, lr)).collect()
}

/// Parse a request file: one `user_id, attribute, cap, tolerance` per line.
/// `attribute` may be an index or a filter name; `cap` and `tolerance` may
/// be omitted. Blank lines and `#` comments are ignored.
pub fn parse_requests(text: &str, origin: &str, filters: &[AttributeFilter]) -> Result<Vec<ProtectRequest>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { path: origin.to_string(), line: n + 1, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 4 {
            return Err(bad(format!("expected 2 to 4 fields, got {}", fields.len())));
        }
        let user = fields[0].parse().map_err(|_| bad(format!("bad user id {:?}", fields[0])))?;
        let attribute = match fields[1].parse::<usize>() {
            Ok(t) => t,
            Err(_) => filters
                .iter()
                .position(|f| f.name() == fields[1])
                .ok_or_else(|| bad(format!("unknown attribute {:?}", fields[1])))?,
        };
        let mut req = ProtectRequest::new(user, attribute);
        if let Some(c) = fields.get(2) {
            req.cap = c.parse().map_err(|_| bad(format!("bad cap {c:?}")))?;
        }
        if let Some(t) = fields.get(3) {
            req.tolerance = t
                .parse()
                .ok()
                .filter(|v: &f64| *v >= 0.0)
                .ok_or_else(|| bad(format!("bad tolerance {t:?}")))?;
        }
        out.push(req);
    }
    Ok(out)
}

pub fn read_requests_file(path: &Path, filters: &[AttributeFilter]) -> Result<Vec<ProtectRequest>> {
    let text = std::fs::read_to_string(path)?;
    parse_requests(&text, &path.display().to_string(), filters)
}

pub const TRACE_CSV_HEADER: &str = "user,attribute,iteration,loss,step,displacement,stop";

/// One row per iteration (iteration 0 is the starting point). The
/// displacement column is only filled on each request's final row.
pub fn write_trace_csv(mut w: impl Write, traces: &[ProtectTrace]) -> Result<()> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for t in traces {
        let last = t.iterations();
        for (k, loss) in t.losses.iter().enumerate() {
            let step = if k == 0 { String::new() } else { t.steps[k - 1].to_string() };
            let (disp, stop) = if k == last {
                (t.displacement.to_string(), format!("{:?}", t.stop).to_lowercase())
            } else {
                (String::new(), String::new())
            };
            writeln!(w, "{},{},{k},{loss},{step},{disp},{stop}", t.request.user, t.request.attribute)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::SimRng;

    fn setup(seed: u64) -> (RecModel, Vec<AttributeFilter>) {
        let mut rng = SimRng::new(seed);
        let mut model = RecModel::new(6, 5, 8, &mut rng);
        for u in 0..6 {
            model.user_mut(u).iter_mut().for_each(|v| *v = rng.gaussian(0.0, 1.0));
        }
        let filters = vec![
            AttributeFilter::random("g", 2, 6, 8, 1.0, &mut rng),
            AttributeFilter::random("a", 7, 6, 8, 1.0, &mut rng),
        ];
        (model, filters)
    }

    #[test]
    fn uniform_filter_leaves_row_alone() {
        let (mut model, _) = setup(1);
        let before = model.clone();
        let flat = vec![AttributeFilter::zeros("g", 2, 6, 8)];
        let t = central_protect(&mut model, &flat, &ProtectRequest::new(2, 0), 0.01).unwrap();
        assert_eq!(t.iterations(), 0);
        assert_eq!(t.stop, StopReason::Tolerance);
        assert_eq!(t.displacement, 0.0);
        assert_eq!(model, before);
    }

    #[test]
    fn loss_trace_is_non_increasing_and_only_row_moves() {
        for seed in 0..10 {
            let (mut model, filters) = setup(seed);
            let before = model.clone();
            let req = ProtectRequest::new(3, 1);
            let t = central_protect(&mut model, &filters, &req, 0.01).unwrap();
            assert!(t.losses.windows(2).all(|w| w[1] <= w[0]));
            assert!(t.final_loss() <= t.initial_loss());
            assert!(t.iterations() <= req.cap);
            assert_eq!(model.item_table(), before.item_table());
            for u in (0..6).filter(|&u| u != 3) {
                assert_eq!(model.user(u), before.user(u));
            }
        }
    }

    #[test]
    fn large_steps_backtrack() {
        let (mut model, filters) = setup(4);
        let t = central_protect(&mut model, &filters, &ProtectRequest { cap: 300, ..ProtectRequest::new(0, 0) }, 50.0)
            .unwrap();
        assert!(t.losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(t.steps.iter().any(|&s| s < 50.0));
    }

    #[test]
    fn converges_and_is_idempotent() {
        let (mut model, filters) = setup(5);
        let req = ProtectRequest { cap: 5000, ..ProtectRequest::new(1, 0) };
        let first = central_protect(&mut model, &filters, &req, 0.1).unwrap();
        assert_eq!(first.stop, StopReason::Tolerance);
        assert!(first.final_loss() < 1e-3);
        let snapshot = model.clone();
        let second = central_protect(&mut model, &filters, &req, 0.1).unwrap();
        assert_eq!(second.iterations(), 0);
        assert_eq!(model, snapshot);
    }

    #[test]
    fn invalid_requests() {
        let (mut model, filters) = setup(6);
        assert!(matches!(
            central_protect(&mut model, &filters, &ProtectRequest::new(0, 2), 0.01),
            Err(Error::State(_))
        ));
        assert!(matches!(
            central_protect(&mut model, &filters, &ProtectRequest::new(6, 0), 0.01),
            Err(Error::Index(_))
        ));
        // validation happens before any row is touched
        let before = model.clone();
        let reqs = [ProtectRequest::new(0, 0), ProtectRequest::new(0, 9)];
        assert!(protect_all(&mut model, &filters, &reqs, 0.01).is_err());
        assert_eq!(model, before);
    }

    #[test]
    fn request_file_parsing() {
        let (_, filters) = setup(7);
        let text = "# user, attribute, cap, tolerance\n3, 1, 50, 0.01\n\n4, g\n5, a, 10 # trailing\n";
        let reqs = parse_requests(text, "r.txt", &filters).unwrap();
        assert_eq!(reqs[0], ProtectRequest { user: 3, attribute: 1, cap: 50, tolerance: 0.01 });
        assert_eq!(reqs[1], ProtectRequest::new(4, 0));
        assert_eq!(reqs[2], ProtectRequest { cap: 10, ..ProtectRequest::new(5, 1) });
        let err = parse_requests("1, 0\nx, 0\n", "r.txt", &filters).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(parse_requests("1, nope\n", "r.txt", &filters).is_err());
        assert!(parse_requests("1, 0, 5, -1\n", "r.txt", &filters).is_err());
    }

    #[test]
    fn trace_csv_rows() {
        let (mut model, filters) = setup(8);
        let t = central_protect(&mut model, &filters, &ProtectRequest { cap: 2, ..ProtectRequest::new(0, 1) }, 0.01)
            .unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, std::slice::from_ref(&t)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_CSV_HEADER);
        assert_eq!(lines.len(), 1 + t.losses.len());
        assert!(lines.last().unwrap().ends_with(",cap"));
    }
}
