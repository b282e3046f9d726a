//! Build named-entity datasets from a knowledge graph: extract a subgraph
//! around a topic, turn it into gazetteers, match them over a cleaned corpus,
//! review the matches and export BIO-tagged splits.

pub mod corpus;
pub mod dataset;
pub mod gazetteer;
pub mod io;
pub mod kgstore;
pub mod matcher;
pub mod pipeline;
pub mod quality;
pub mod review;
pub mod text;
pub mod tokenize;
pub mod types;
