from typing import List

from pydantic import BaseModel, Field

from app.models.localization import Box


class ManifestEntry(BaseModel):
    """One annotated image; ``path`` is relative to the manifest directory"""
    path: str
    label: int = Field(..., ge=0)
    boxes: List[Box] = Field(..., min_length=1)

    @property
    def split(self) -> str:
        return self.path.split("/", 1)[0]

    @property
    def image_id(self) -> str:
        return self.path.rsplit(".", 1)[0]


class DatasetManifest(BaseModel):
    """Image list with labels, ground-truth boxes, class names and generator seed"""
    entries: List[ManifestEntry]
    class_names: List[str]
    seed: int
    root: str = Field(".", description="Directory the entry paths are relative to")

    def split(self, name: str) -> "DatasetManifest":
        return self.model_copy(update={"entries": [e for e in self.entries if e.split == name]})
