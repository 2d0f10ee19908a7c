use std::time::Instant;

use rayon::prelude::*;

use super::{
    best_path_score, greedy_ctc, greedy_s2s, BeamDecoder, DecodeError, EmissionMatrix, FrameMode,
    Hypothesis,
};
use crate::s2s_adapter::{adapt, AdapterConfig};

pub struct BatchItem {
    pub id: String,
    pub emissions: EmissionMatrix,
}

pub enum Strategy<'a> {
    Greedy,
    Beam(&'a BeamDecoder<'a>),
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub text: String,
    pub score: f64,
    /// Ranked hypotheses; empty for greedy decoding.
    pub nbest: Vec<Hypothesis>,
    pub warning: Option<String>,
}

#[derive(Debug)]
pub struct BatchOutput {
    pub id: String,
    pub result: Result<Decoded, DecodeError>,
    /// Wall-clock seconds spent on this item.
    pub seconds: f64,
}

fn decode_one(
    emissions: &EmissionMatrix,
    strategy: &Strategy,
    adapter: Option<&AdapterConfig>,
) -> Result<Decoded, DecodeError> {
    let adapted;
    let emissions = match adapter {
        Some(config) => {
            adapted = adapt(emissions, config)?;
            &adapted
        }
        None => emissions,
    };
    match (strategy, emissions.mode()) {
        (Strategy::Greedy, FrameMode::Ctc { .. }) => {
            let labeling = greedy_ctc(emissions)?;
            Ok(Decoded {
                text: emissions.text_of(&labeling),
                score: best_path_score(emissions, emissions.frames()),
                nbest: Vec::new(),
                warning: None,
            })
        }
        (Strategy::Greedy, FrameMode::Seq2Seq { .. }) => {
            let out = greedy_s2s(emissions)?;
            let used = out.labeling.len() + usize::from(out.terminated);
            Ok(Decoded {
                text: emissions.text_of(&out.labeling),
                score: best_path_score(emissions, used),
                nbest: Vec::new(),
                warning: (!out.terminated).then(|| "no end token predicted".to_string()),
            })
        }
        (Strategy::Beam(decoder), _) => {
            let nbest = decoder.decode(emissions)?;
            let (text, score, warning) = match nbest.first() {
                Some(best) => (best.text.clone(), best.score, None),
                None => (
                    String::new(),
                    f64::NEG_INFINITY,
                    Some("no hypothesis survived the search".to_string()),
                ),
            };
            Ok(Decoded {
                text,
                score,
                nbest,
                warning,
            })
        }
    }
}

/// Decodes items independently, timing each one. Failures are reported per
/// item and do not stop the batch. Every item must share the vocabulary of
/// the first one.
pub fn decode_batch(
    items: &[BatchItem],
    strategy: &Strategy,
    adapter: Option<&AdapterConfig>,
    parallel: bool,
) -> Vec<BatchOutput> {
    let reference = items.first().map(|i| i.emissions.vocab());
    let run = |item: &BatchItem| {
        let start = Instant::now();
        let result = if Some(item.emissions.vocab()) != reference {
            Err(DecodeError::VocabMismatch)
        } else {
            decode_one(&item.emissions, strategy, adapter)
        };
        BatchOutput {
            id: item.id.clone(),
            result,
            seconds: start.elapsed().as_secs_f64(),
        }
    };
    if parallel {
        items.par_iter().map(run).collect()
    } else {
        items.iter().map(run).collect()
    }
}
