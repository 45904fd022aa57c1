// Reference-accent page model: six labeled samples, playable when available,
// placeholder with a warning otherwise. Viewing references never touches
// session state (it only reads /references).

import { ApiClient, ReferenceSample } from "./api.js";

export interface ReferenceItem {
  category: string;
  audioUrl: string | null;
  warning: string | null;
}

export async function loadReferencePage(api: ApiClient): Promise<ReferenceItem[]> {
  const { categories } = await api.references();
  return categories.map((sample: ReferenceSample) => ({
    category: sample.category,
    audioUrl: sample.available ? sample.audio_url : null,
    warning: sample.available ? null : `No reference sample for ${sample.category}`,
  }));
}
