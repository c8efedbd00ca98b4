use super::kmeans::SampleStream;
use crate::error::Result;
use crate::imaging::{extract_patch, CellSegment, SectionImage};

/// Patch vectors of every segmented cell, re-extracted on each replay.
pub struct PatchStream<'a> {
    pub sections: &'a [(SectionImage, Vec<CellSegment>)],
    pub patch_size: usize,
}

impl SampleStream for PatchStream<'_> {
    fn replay(&mut self, sink: &mut dyn FnMut(&[f32]) -> Result<()>) -> Result<()> {
        let mut buf = Vec::with_capacity(self.patch_size * self.patch_size);
        for (image, segments) in self.sections {
            for seg in segments {
                let patch = extract_patch(image, seg, self.patch_size)?;
                buf.clear();
                buf.extend(patch.to_vector().iter().map(|&v| v as f32));
                sink(&buf)?;
            }
        }
        Ok(())
    }
}
