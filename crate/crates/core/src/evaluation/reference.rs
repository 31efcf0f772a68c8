//! Published reference figures, shown in reports as "reference [paper]".

/// Per-concept (precision, recall) in concept enumeration order, with the
/// printed overall pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSystem {
    pub name: &'static str,
    pub per_concept: [(f64, f64); 13],
    pub overall: (f64, f64),
}

pub const COMPARISON: [ReferenceSystem; 6] = [
    ReferenceSystem {
        name: "Onco-Ret (S)",
        per_concept: [
            (0.85, 0.86),
            (0.65, 0.76),
            (0.37, 0.77),
            (0.74, 0.84),
            (0.52, 0.67),
            (0.61, 0.69),
            (0.70, 0.73),
            (0.42, 0.63),
            (0.64, 0.69),
            (0.70, 0.76),
            (0.59, 0.72),
            (0.62, 0.66),
            (0.64, 0.66),
        ],
        overall: (0.62, 0.73),
    },
    ReferenceSystem {
        name: "Onco-Ret (O)",
        per_concept: [
            (0.81, 0.78),
            (0.68, 0.71),
            (0.42, 0.72),
            (0.69, 0.81),
            (0.69, 0.62),
            (0.75, 0.69),
            (0.84, 0.77),
            (0.57, 0.58),
            (0.78, 0.66),
            (0.64, 0.74),
            (0.59, 0.76),
            (0.70, 0.53),
            (0.77, 0.57),
        ],
        overall: (0.69, 0.69),
    },
    ReferenceSystem {
        name: "PubmedBert",
        per_concept: [
            (0.41, 0.50),
            (0.41, 0.50),
            (0.42, 0.56),
            (0.47, 0.54),
            (0.39, 0.43),
            (0.46, 0.48),
            (0.51, 0.57),
            (0.35, 0.45),
            (0.36, 0.64),
            (0.49, 0.49),
            (0.38, 0.36),
            (0.44, 0.51),
            (0.45, 0.56),
        ],
        overall: (0.43, 0.51),
    },
    ReferenceSystem {
        name: "Onco-Ret (L)",
        per_concept: [
            (0.62, 0.75),
            (0.61, 0.75),
            (0.63, 0.83),
            (0.71, 0.96),
            (0.58, 0.64),
            (0.68, 0.72),
            (0.77, 0.85),
            (0.53, 0.67),
            (0.54, 0.95),
            (0.73, 0.73),
            (0.57, 0.54),
            (0.66, 0.77),
            (0.67, 0.84),
        ],
        overall: (0.64, 0.77),
    },
    ReferenceSystem {
        name: "Open AI Ada",
        per_concept: [
            (0.59, 0.46),
            (0.40, 0.49),
            (0.40, 0.56),
            (0.29, 0.71),
            (0.28, 0.80),
            (0.22, 0.52),
            (0.38, 0.39),
            (0.24, 0.55),
            (0.35, 0.48),
            (0.29, 0.31),
            (0.42, 0.52),
            (0.08, 0.65),
            (0.13, 0.52),
        ],
        overall: (0.31, 0.54),
    },
    ReferenceSystem {
        name: "Mistral SFR",
        per_concept: [
            (0.51, 0.39),
            (0.26, 0.32),
            (0.30, 0.41),
            (0.24, 0.59),
            (0.13, 0.47),
            (0.22, 0.52),
            (0.25, 0.26),
            (0.12, 0.27),
            (0.34, 0.46),
            (0.15, 0.17),
            (0.31, 0.38),
            (0.05, 0.38),
            (0.05, 0.21),
        ],
        overall: (0.23, 0.37),
    },
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceLatency {
    pub name: &'static str,
    pub seconds_per_patient: f64,
    pub f1: f64,
}

pub const LATENCY: [ReferenceLatency; 5] = [
    ReferenceLatency {
        name: "Onco-Ret (O)",
        seconds_per_patient: 318.0,
        f1: 0.69,
    },
    ReferenceLatency {
        name: "Onco-Ret (S)",
        seconds_per_patient: 1200.0,
        f1: 0.67,
    },
    ReferenceLatency {
        name: "Onco-Ret (L)",
        seconds_per_patient: 1140.0,
        f1: 0.71,
    },
    ReferenceLatency {
        name: "Open AI Ada",
        seconds_per_patient: 2289.75,
        f1: 0.52,
    },
    ReferenceLatency {
        name: "Mistral SFR",
        seconds_per_patient: 5160.0,
        f1: 0.28,
    },
];

/// Overall precision and recall at the two ends of a k-sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTrend {
    pub name: &'static str,
    pub k_low: usize,
    pub k_high: usize,
    pub recall: (f64, f64),
    pub precision: (f64, f64),
}

pub const SWEEP: [ReferenceTrend; 2] = [
    ReferenceTrend {
        name: "Open AI Ada",
        k_low: 25,
        k_high: 400,
        recall: (0.12, 0.75),
        precision: (0.39, 0.25),
    },
    ReferenceTrend {
        name: "Mistral SFR",
        k_low: 25,
        k_high: 400,
        recall: (0.07, 0.61),
        precision: (0.46, 0.20),
    },
];

/// Unweighted mean of the per-concept pairs.
pub fn macro_average(system: &ReferenceSystem) -> (f64, f64) {
    let n = system.per_concept.len() as f64;
    let (p, r) = system.per_concept.iter().fold((0.0, 0.0), |(p, r), &(x, y)| (p + x, r + y));
    (p / n, r / n)
}

pub const REFERENCE_TAG: &str = "reference [paper]";
