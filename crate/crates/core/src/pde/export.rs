use std::io::{self, Write};

use super::ValueField;
use crate::scalar::{fmt17, Field};

impl<S: Field> ValueField<S> {
    /// `t,x,value,flag,k_plus,k_minus`, one row per `(level, node)`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,x,value,flag,k_plus,k_minus")?;
        for level in 0..self.grid.levels() {
            let t = fmt17(self.grid.t(level));
            for node in 0..self.grid.nodes() {
                let i = self.index(level, node);
                writeln!(
                    out,
                    "{t},{},{},{},{},{}",
                    fmt17(self.grid.x(node)),
                    fmt17(self.values[i]),
                    self.flags[i].label(),
                    fmt17(self.k_plus[i]),
                    fmt17(self.k_minus[i])
                )?;
            }
        }
        Ok(())
    }

    /// gnuplot `nonuniform matrix` text: the first row holds the node count
    /// and the `x` coordinates, every following row a time and its values.
    pub fn write_gnuplot<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# plot 'file' nonuniform matrix with image")?;
        write!(out, "{}", self.grid.nodes())?;
        for node in 0..self.grid.nodes() {
            write!(out, " {}", fmt17(self.grid.x(node)))?;
        }
        writeln!(out)?;
        for level in 0..self.grid.levels() {
            write!(out, "{}", fmt17(self.grid.t(level)))?;
            for &v in self.level(level) {
                write!(out, " {}", fmt17(v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
