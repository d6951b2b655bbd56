use ndarray::Array2;

use crate::corpus::Conversation;

/// Intra- and inter-speaker relation edges among `U_1..U_upto`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerGraph {
    pub intra: Array2<bool>,
    pub inter: Array2<bool>,
    /// `false` for utterances with an empty speaker.
    pub known: Vec<bool>,
}

impl SpeakerGraph {
    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    /// Column mask over known speakers, `t × t`.
    pub fn known_columns(&self) -> Array2<bool> {
        let t = self.len();
        Array2::from_shape_fn((t, t), |(_, j)| self.known[j])
    }
}

pub fn build_speaker_graph(conversation: &Conversation, upto: usize) -> SpeakerGraph {
    let utts = &conversation.utterances[..upto.min(conversation.len())];
    let t = utts.len();
    let known: Vec<bool> = utts.iter().map(|u| u.has_speaker()).collect();
    let same = |i: usize, j: usize| utts[i].speaker == utts[j].speaker;
    SpeakerGraph {
        intra: Array2::from_shape_fn((t, t), |(i, j)| known[i] && known[j] && same(i, j)),
        inter: Array2::from_shape_fn((t, t), |(i, j)| known[i] && known[j] && !same(i, j)),
        known,
    }
}
