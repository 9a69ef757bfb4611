//! Constructed scoring cases with error times worked out by hand.

use picdiar::annotation::{Annotation, ScoringRegions};
use picdiar::metrics::{der, ScoringOptions};

pub fn ann(rec: &str, segs: &[(f64, f64, &str)]) -> Annotation {
    let mut a = Annotation::new(rec);
    for &(on, off, s) in segs {
        a.push(on, off, s).unwrap();
    }
    a
}

pub const TOL: f64 = 1e-9;

pub struct Case {
    pub name: &'static str,
    pub reference: Annotation,
    pub hypothesis: Annotation,
    pub regions: Option<ScoringRegions>,
    pub options: ScoringOptions,
    pub scored: f64,
    pub missed: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub jer: Option<f64>,
}

pub fn opts(collar: f64, score_overlap: bool) -> ScoringOptions {
    ScoringOptions { collar, score_overlap }
}

/// Ten constructed cases with error times worked out by hand.
pub fn hand_cases() -> Vec<Case> {
    let a10 = ann("r", &[(0.0, 10.0, "A")]);
    let ab = ann("r", &[(0.0, 5.0, "A"), (5.0, 10.0, "B")]);
    let overlapped = ann("r", &[(0.0, 10.0, "A"), (5.0, 10.0, "B")]);
    vec![
        Case {
            name: "identical",
            reference: ab.clone(),
            hypothesis: ab.relabel(|s| format!("h{s}")),
            regions: None,
            options: opts(0.0, true),
            scored: 10.0,
            missed: 0.0,
            false_alarm: 0.0,
            confusion: 0.0,
            jer: Some(0.0),
        },
        Case {
            name: "empty hypothesis",
            reference: a10.clone(),
            hypothesis: Annotation::new("r"),
            regions: None,
            options: opts(0.0, true),
            scored: 10.0,
            missed: 10.0,
            false_alarm: 0.0,
            confusion: 0.0,
            jer: Some(1.0),
        },
        Case {
            name: "one second of confusion",
            reference: a10.clone(),
            hypothesis: ann("r", &[(0.0, 9.0, "A"), (9.0, 10.0, "B")]),
            regions: None,
            options: opts(0.0, true),
            scored: 10.0,
            missed: 0.0,
            false_alarm: 0.0,
            confusion: 1.0,
            jer: Some(0.1),
        },
        Case {
            name: "half covered",
            reference: a10.clone(),
            hypothesis: ann("r", &[(0.0, 5.0, "A")]),
            regions: None,
            options: opts(0.0, true),
            scored: 10.0,
            missed: 5.0,
            false_alarm: 0.0,
            confusion: 0.0,
            jer: Some(0.5),
        },
        Case {
            name: "false alarm past the end",
            reference: a10.clone(),
            hypothesis: ann("r", &[(0.0, 12.0, "X")]),
            regions: None,
            options: opts(0.0, true),
            scored: 10.0,
            missed: 0.0,
            false_alarm: 2.0,
            confusion: 0.0,
            jer: Some(1.0 - 10.0 / 12.0),
        },
        Case {
            name: "missed overlap",
            reference: overlapped.clone(),
            hypothesis: ann("r", &[(0.0, 10.0, "X")]),
            regions: None,
            options: opts(0.0, true),
            scored: 15.0,
            missed: 5.0,
            false_alarm: 0.0,
            confusion: 0.0,
            jer: Some((0.0 + 1.0) / 2.0),
        },
        Case {
            name: "overlap excluded",
            reference: overlapped,
            hypothesis: ann("r", &[(0.0, 10.0, "X")]),
            regions: None,
            options: opts(0.0, false),
            scored: 5.0,
            missed: 0.0,
            false_alarm: 0.0,
            confusion: 0.0,
            // Frames 5-10 are excluded, so B has no scored frames.
            jer: Some(0.0),
        },
        Case {
            name: "collar hides a late change",
            reference: ab.clone(),
            hypothesis: ann("r", &[(0.0, 5.4, "A"), (5.4, 10.0, "B")]),
            regions: None,
            options: opts(0.5, true),
            scored: 8.0,
            missed: 0.0,
            false_alarm: 0.0,
            confusion: 0.0,
            jer: Some(0.0),
        },
        Case {
            name: "outside the scoring regions",
            reference: a10.clone(),
            hypothesis: ann("r", &[(0.0, 10.0, "A"), (10.0, 20.0, "B")]),
            regions: Some(ScoringRegions::new("r", vec![(0.0, 10.0)]).unwrap()),
            options: opts(0.0, true),
            scored: 10.0,
            missed: 0.0,
            false_alarm: 0.0,
            confusion: 0.0,
            jer: Some(0.0),
        },
        Case {
            name: "merged speakers",
            reference: ann("r", &[(0.0, 6.0, "A"), (6.0, 10.0, "B")]),
            hypothesis: ann("r", &[(0.0, 10.0, "X")]),
            regions: None,
            options: opts(0.0, true),
            scored: 10.0,
            missed: 0.0,
            false_alarm: 0.0,
            confusion: 4.0,
            jer: Some((0.4 + 1.0) / 2.0),
        },
    ]
}

/// Scores a case and compares every component with its hand value.
pub fn check_case(c: &Case) -> Result<(), String> {
    let r = der(&c.reference, &c.hypothesis, c.regions.as_ref(), &c.options).map_err(|e| e.to_string())?;
    let close = |a: f64, b: f64| (a - b).abs() < TOL;
    let want = (c.missed + c.false_alarm + c.confusion) / c.scored;
    let checks = [
        ("scored", r.scored_speech, c.scored),
        ("missed", r.missed, c.missed),
        ("false alarm", r.false_alarm, c.false_alarm),
        ("confusion", r.confusion, c.confusion),
        ("der", r.der.unwrap_or(f64::NAN), want),
    ];
    for (what, got, want) in checks {
        if !close(got, want) {
            return Err(format!("{what} {got} vs {want}"));
        }
    }
    match (r.jer, c.jer) {
        (Some(a), Some(b)) if close(a, b) => Ok(()),
        (None, None) => Ok(()),
        (a, b) => Err(format!("jer {a:?} vs {b:?}")),
    }
}
