pub mod tensorfile;
