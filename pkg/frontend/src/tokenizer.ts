/** Word-level tokenizer with BOS/EOS markers and character spans. */

export const BOS = "<s>";
export const EOS = "</s>";

const WORD = /[A-Za-z0-9_']+|[^\sA-Za-z0-9_']/g;

export interface Tokenized {
  tokens: string[];
  /** Character span per token; null for the BOS/EOS markers. */
  spans: Array<[number, number] | null>;
}

export function tokenize(text: string): Tokenized {
  const tokens: string[] = [BOS];
  const spans: Array<[number, number] | null> = [null];
  for (const match of text.matchAll(WORD)) {
    tokens.push(match[0]);
    spans.push([match.index!, match.index! + match[0].length]);
  }
  tokens.push(EOS);
  spans.push(null);
  return { tokens, spans };
}

/** Ordinals of the tokens overlapping the subject's character span. */
export function subjectIndices(
  tokenized: Tokenized,
  start: number,
  end: number,
): number[] {
  const hits: number[] = [];
  tokenized.spans.forEach((span, index) => {
    if (span !== null && span[0] < end && start < span[1]) {
      hits.push(index);
    }
  });
  if (hits.length === 0) {
    throw new Error(`no tokens overlap subject span [${start}, ${end})`);
  }
  return hits;
}
