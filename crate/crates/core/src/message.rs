//! The closed set of protocol messages exchanged between agents.

use std::fmt;

use crate::osc::Stamp;
use crate::splitting::{Label, SharePayload};

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    /// Sent by an idle agent. Under the centralized policy the central
    /// agent forwards it on behalf of `requester`. `epoch` counts the work
    /// pieces the requester has received and `broadcasts` the load
    /// broadcasts it has made; both only matter in order-sensitive mode.
    RequestWork {
        requester: u32,
        load: u32,
        labels: Vec<Label>,
        epoch: u32,
        broadcasts: u64,
    },
    /// `stamp` is the receiver's new position in order-sensitive mode.
    ReplyWithWork {
        payload: Box<SharePayload>,
        stamp: Option<Stamp>,
    },
    ReplyWithoutWork {
        requester: u32,
        load: u32,
    },
    /// Load update after a sharing event `giver -> receiver`. With
    /// `giver == receiver` it is a plain load update of that agent.
    SendLoadInfo {
        giver: u32,
        receiver: u32,
        giver_load: u32,
        receiver_load: u32,
        stamp: Option<Stamp>,
    },
    ReplyInOsc {
        load: u32,
    },
    /// Carries the sender's position so the recipient can tell which side
    /// of it the sender is on.
    RequestOsc {
        load: u32,
        key: Vec<u32>,
    },
    /// With `running` unset the sender has run out of the work it got at
    /// `epoch`; with it set the sender still works, to the right of the
    /// requester.
    OscAcknowledgment {
        load: u32,
        epoch: u32,
        running: bool,
    },
    TerminationToken {
        black: bool,
        initiator: u32,
    },
    Halt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    RequestWork,
    ReplyWithWork,
    ReplyWithoutWork,
    SendLoadInfo,
    ReplyInOsc,
    RequestOsc,
    OscAcknowledgment,
    TerminationToken,
    Halt,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::RequestWork,
        MessageKind::ReplyWithWork,
        MessageKind::ReplyWithoutWork,
        MessageKind::SendLoadInfo,
        MessageKind::ReplyInOsc,
        MessageKind::RequestOsc,
        MessageKind::OscAcknowledgment,
        MessageKind::TerminationToken,
        MessageKind::Halt,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<MessageKind> {
        MessageKind::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::RequestWork => "Request_Work",
            MessageKind::ReplyWithWork => "Reply_With_Work",
            MessageKind::ReplyWithoutWork => "Reply_Without_Work",
            MessageKind::SendLoadInfo => "Send_LoadInfo",
            MessageKind::ReplyInOsc => "Reply_In_OSC",
            MessageKind::RequestOsc => "Request_OSC",
            MessageKind::OscAcknowledgment => "OSC_Acknowledgment",
            MessageKind::TerminationToken => "Termination_Token",
            MessageKind::Halt => "Halt",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::RequestWork { .. } => MessageKind::RequestWork,
            Message::ReplyWithWork { .. } => MessageKind::ReplyWithWork,
            Message::ReplyWithoutWork { .. } => MessageKind::ReplyWithoutWork,
            Message::SendLoadInfo { .. } => MessageKind::SendLoadInfo,
            Message::ReplyInOsc { .. } => MessageKind::ReplyInOsc,
            Message::RequestOsc { .. } => MessageKind::RequestOsc,
            Message::OscAcknowledgment { .. } => MessageKind::OscAcknowledgment,
            Message::TerminationToken { .. } => MessageKind::TerminationToken,
            Message::Halt => MessageKind::Halt,
        }
    }
}
