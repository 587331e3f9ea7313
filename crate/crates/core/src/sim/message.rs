/// Payload is accounted as 32-bit floats: 4 bytes per scalar.
pub const BYTES_PER_SCALAR: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    GlobalModel,
    LocalModel,
    LayerMeanUp,
    LayerMeanDown,
    LayerVarUp,
    LayerVarDown,
    LayerStatGradUp,
    LayerStatGradDown,
}

impl MessageKind {
    /// Layer-aggregation traffic, as opposed to the model exchange.
    pub fn is_layer_traffic(self) -> bool {
        !matches!(self, MessageKind::GlobalModel | MessageKind::LocalModel)
    }
}

/// One server<->client transmission. Downlink broadcasts are recorded
/// once; uplinks once per client.
#[derive(Debug, Clone, Copy)]
pub struct Message {
    pub direction: Direction,
    pub kind: MessageKind,
    pub layer: Option<usize>,
    pub scalar_count: u64,
}

impl Message {
    pub fn byte_size(&self) -> u64 {
        BYTES_PER_SCALAR * self.scalar_count
    }
}

/// Ordered log of every exchange, with barrier round-trips counted the
/// way the protocol defines them: one per layer-mean, layer-variance,
/// and layer-stat-grad barrier, plus one per full model exchange.
#[derive(Debug, Clone, Default)]
pub struct ProtocolTranscript {
    pub messages: Vec<Message>,
    pub model_rounds: u64,
    pub layer_rounds: u64,
}

impl ProtocolTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, message: Message) {
        self.messages.push(message);
    }

    pub fn record_model_round(&mut self) {
        self.model_rounds += 1;
    }

    pub fn record_layer_round(&mut self) {
        self.layer_rounds += 1;
    }

    pub fn round_trips(&self) -> u64 {
        self.model_rounds + self.layer_rounds
    }

    pub fn total_bytes(&self) -> u64 {
        self.messages.iter().map(Message::byte_size).sum()
    }

    /// Bytes moved by the per-layer aggregation barriers only.
    pub fn layer_bytes(&self) -> u64 {
        self.messages
            .iter()
            .filter(|m| m.kind.is_layer_traffic())
            .map(Message::byte_size)
            .sum()
    }
}
