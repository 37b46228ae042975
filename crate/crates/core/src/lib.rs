//! Mapping research publications to the 17 UN Sustainable Development Goals.
//!
//! Two independent taggers are provided: embedding similarity against one
//! document per goal ([`simtag`]), and a chat-completion model whose free-text
//! answers are parsed into goal assignments ([`llmtag`]). Their outputs can be
//! intersected for consensus ([`hybrid`]) or scored against each other with a
//! multi-label classification report ([`evaluate`]).

pub mod cli;
pub mod corpus;
pub mod embed;
pub mod evaluate;
pub mod goals;
pub mod hybrid;
pub mod ingest;
pub mod llmtag;
pub mod simtag;
